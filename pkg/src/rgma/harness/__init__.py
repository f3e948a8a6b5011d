from rgma.harness.metrics import (
    MONITORING_KEY,
    MONITORING_SQL,
    SelfMonitoringRecord,
    WindowSummary,
    summaries_to_csv,
    summarize,
)
from rgma.harness.scenario import (
    ArchiverCfg,
    ConsumerCfg,
    FaultCfg,
    ProducerCfg,
    Scenario,
    ScenarioResult,
    run_scenario,
    typical_site_scenario,
)

__all__ = [
    "ArchiverCfg",
    "ConsumerCfg",
    "FaultCfg",
    "MONITORING_KEY",
    "MONITORING_SQL",
    "ProducerCfg",
    "Scenario",
    "ScenarioResult",
    "SelfMonitoringRecord",
    "WindowSummary",
    "run_scenario",
    "summaries_to_csv",
    "summarize",
    "typical_site_scenario",
]

from .llm import ChatClient, EndpointConfig, LLMGenerator, LLMJudge
from .oracle import (
    ArmGenerator,
    FixedArms,
    OracleGenerator,
    OracleJudge,
    PositionBiasedJudge,
    SyntheticTask,
)
from .templates import Template, TemplateError, default_template, load_template

__all__ = [
    "ArmGenerator",
    "ChatClient",
    "EndpointConfig",
    "FixedArms",
    "LLMGenerator",
    "LLMJudge",
    "OracleGenerator",
    "OracleJudge",
    "PositionBiasedJudge",
    "SyntheticTask",
    "Template",
    "TemplateError",
    "default_template",
    "load_template",
]

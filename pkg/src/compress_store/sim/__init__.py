from .engine import EventQueue, SimEvent
from .network import RunOutput, run, theoretical_pps
from .scenario import Scenario, ScenarioError

__all__ = ["EventQueue", "SimEvent", "RunOutput", "run", "theoretical_pps", "Scenario", "ScenarioError"]

from .models import Mode, ScenarioFile, resolve
from .runner import Runner, feasibility

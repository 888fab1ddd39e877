"""Parameter sweeps: task templates, cartesian expansion, wizard and CLI."""
from app.sweep.template import ParameterDomain, TaskTemplate, expand, load_template, save_template

__all__ = ["ParameterDomain", "TaskTemplate", "expand", "load_template", "save_template"]

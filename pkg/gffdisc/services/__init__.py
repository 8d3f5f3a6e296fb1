# gffdisc Services
from .experiment_service import ExperimentResult, ExperimentService

__all__ = [
    'ExperimentResult',
    'ExperimentService',
]

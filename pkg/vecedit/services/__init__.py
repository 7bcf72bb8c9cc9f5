"""
VecEdit Services
"""

from vecedit.services.linalg_service import LinalgService
from vecedit.services.model_service import ModelService
from vecedit.services.weights_service import WeightsService
from vecedit.services.steering_service import SteeringService
from vecedit.services.editor_service import EditorService
from vecedit.services.oracle_service import OracleService
from vecedit.services.metric_service import MetricService
from vecedit.services.bench_service import BenchService
from vecedit.services.batch_service import BatchService

__all__ = ['LinalgService', 'ModelService', 'WeightsService', 'SteeringService', 'EditorService',
           'OracleService', 'MetricService', 'BenchService', 'BatchService']

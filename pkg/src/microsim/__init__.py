"""Trace-driven, cycle-level multicore out-of-order CPU simulator.

The default machine mirrors a 12-core Sandy Bridge server.  Feed it one
micro-op trace per core, get cycle counts and per-structure statistics
back, and compare them with hardware measurements via ``microsim.validate``.
"""

from .branch_predictor import Prediction, StaticPredictor, Tage, TageConfig
from .config import (CacheConfig, CacheLevelName, FuKind, MachineConfig, NocConfig,
                     PipelineConfig, default_sandybridge, load_config, parse_config,
                     serialize_config, validate_config)
from .core import Core, CoreStats, run_core
from .engine import SimReport, Simulation, collect_report, parse_report, simulate
from .errors import (ConfigError, MicrosimError, PredictorError, SimulationError, TraceError,
                     ValidationError)
from .interconnect import Bus, BusMessage, MsgKind
from .memhier import MemoryHierarchy, Mesi
from .trace import (MicroOp, OpKind, Pattern, TraceStream, gen_microtrace, read_trace_stream,
                    write_trace)
from .validate import (ComparisonRow, ReferenceMeasurement, ValidationReport, absolute_error,
                       compare_report, mean_absolute_error)

__version__ = "0.1.0"

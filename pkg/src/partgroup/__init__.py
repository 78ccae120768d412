"""Edge-guided instance-level human parsing: partition and evaluation."""
from .edges import (FlipLabelPolicy, FusionInput, average_predictions, binarize_edges,
                    fuse_score_maps, nms_thin)
from .errors import (CapacityError, FormatError, GenerationError, LengthError,
                     PartGroupError, ValidationError)
from .metrics import (EdgeEvalConfig, accumulate_confusion, ap_r, edge_pr, iou_from_confusion,
                      new_confusion, ods_ois, score_instances)
from .partition import (PartitionConfig, build_regions, decode_lines, group_lines,
                        merge_regions, partition)
from .raster import (CIHP, PASCAL_PERSON_PART, Taxonomy, argmax_labels, decode_raster,
                     encode_raster, read_raster, write_raster)
from .synth import SceneConfig, derive_edges, gen_scene, oracle_partition

__version__ = "0.1.0"

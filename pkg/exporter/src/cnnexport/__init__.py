"""CNN activation exporter writing GDSC descriptor files."""

from .extract import LAYERS, MODELS, ExportSpec, build_model, extract_layer
from .export import export_dataset
from .gdsc import read_gdsc, write_gdsc
from .preprocess import CROPS, IMAGENET_MEAN, crop_geometry, crop_image

__version__ = "0.1.0"

"""Dataset export: images -> cropped tensors -> layer vectors -> GDSC."""

from __future__ import annotations

import sys
from pathlib import Path

from PIL import Image

from .extract import ExportSpec, build_model, extract_layer
from .gdsc import write_gdsc
from .preprocess import crop_image


def export_dataset(
    pairs: list[tuple[str, Path]],
    spec: ExportSpec,
    out_path,
    weights_path=None,
    seed: int = 0,
    log=sys.stderr,
) -> int:
    """Export one record per image id; failures are logged and skipped,
    the file is still written for the successes, and the number of
    failures is returned."""
    model = build_model(spec, weights_path, seed)
    records = []
    failures = 0
    for image_id, path in pairs:
        try:
            with Image.open(path) as img:
                tensor = crop_image(img, spec.input_side, spec.crop, spec.mean)
            records.append((image_id, extract_layer(model, tensor, spec)))
        except Exception as exc:
            failures += 1
            print(f"FAILED {image_id}: {exc}", file=log)
    metadata = {
        "source": "cnn",
        "model": spec.model,
        "layer": spec.layer,
        "crop": spec.crop,
        "input_side": str(spec.input_side),
        "normalize": "l2_after_flatten",
        "pool5_layout": "hwc_rowmajor",
        "weights": "pretrained" if weights_path else f"random_init_seed{seed}",
    }
    dim = spec.model_spec.layer_length(spec.layer)
    write_gdsc(out_path, dim, records, metadata)
    return failures

"""Command line: ``caswit tile|pretrain|train|eval|infer|attnmap --config FILE [--key value ...]``.

Exit codes: 0 success, 1 usage/configuration, 2 data, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import netpbm
from .checkpoint import FormatError, LoadError
from .config import MODES, ConfigFileError, RunConfig, load_config
from .fusion import write_attention_map
from .losses import DataError
from .optim import NumericError
from .swin import ConfigError
from .tensor import DimensionError, ParameterError, UsageError
from .tiling import TileDataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("caswit")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigFileError(message)


def parse_args(argv: list[str]) -> RunConfig:
    parser = _Parser(prog="caswit", description=__doc__.splitlines()[0])
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", help="flat key = value file")
    args, rest = parser.parse_known_args(argv)
    overrides = {}
    i = 0
    while i < len(rest):
        flag = rest[i]
        if not flag.startswith("--"):
            raise ConfigFileError(f"unexpected argument {flag!r}")
        key = flag[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(rest):
                raise ConfigFileError(f"missing value for {flag}")
            value = rest[i + 1]
            i += 2
        overrides[key] = value
    return load_config(args.config, overrides, mode=args.mode)


def _out_dir(cfg: RunConfig) -> Path:
    if not cfg.out:
        raise ConfigFileError("out is required for this mode")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(cfg: RunConfig) -> TileDataset:
    if not cfg.manifest:
        raise ConfigFileError("manifest is required for this mode")
    return TileDataset.from_manifest(cfg.manifest)


def run_tile(cfg: RunConfig) -> None:
    """Write each tile's LR context image as ``<tile_id>_lr.ppm``."""
    ds = _manifest(cfg)
    out = _out_dir(cfg)
    for i, tile in enumerate(ds.tiles):
        netpbm.write_ppm(out / f"{tile.tile_id}_lr.ppm", netpbm.from_unit(ds.pair(i).lr))
    log.info("wrote %d context images to %s", len(ds), out)


def run_infer(cfg: RunConfig) -> None:
    from .training import build_model

    if not cfg.checkpoint:
        raise ConfigFileError("checkpoint is required for infer")
    model = build_model(cfg)
    ds = _manifest(cfg)
    out = _out_dir(cfg)
    for i, tile in enumerate(ds.tiles):
        p = ds.pair(i)
        pred = model.predict(p.hr, p.lr)[0]
        netpbm.write_pgm(out / f"{tile.tile_id}_pred.pgm", pred.astype(np.uint8))
    log.info("wrote %d class maps to %s", len(ds), out)


def run_attnmap(cfg: RunConfig) -> None:
    from .training import attention_map, build_model

    if not cfg.checkpoint:
        raise ConfigFileError("checkpoint is required for attnmap")
    model = build_model(cfg)
    ds = _manifest(cfg)
    ids = [t.tile_id for t in ds.tiles]
    if cfg.tile_id not in ids:
        raise ConfigFileError(f"tile_id {cfg.tile_id!r} is not in the manifest")
    pair = ds.pair(ids.index(cfg.tile_id))
    query = (cfg.query_y, cfg.query_x)
    amap = attention_map(model, pair, cfg.stage, query)
    if not cfg.out:
        raise ConfigFileError("out is required for attnmap")
    Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
    write_attention_map(cfg.out, amap, cfg.stage, query)


def run(cfg: RunConfig) -> None:
    from . import training

    if cfg.mode == "tile":
        run_tile(cfg)
    elif cfg.mode == "pretrain":
        training.pretrain(cfg)
    elif cfg.mode == "train":
        training.train(cfg)
    elif cfg.mode == "eval":
        report = training.evaluate(cfg)
        sys.stdout.write(report.to_text())
    elif cfg.mode == "infer":
        run_infer(cfg)
    elif cfg.mode == "attnmap":
        run_attnmap(cfg)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        cfg = parse_args(sys.argv[1:] if argv is None else argv)
        run(cfg)
    except (ConfigFileError, ConfigError, ParameterError, UsageError, LoadError) as exc:
        log.error("error: %s", exc)
        return EXIT_USAGE
    except (DataError, DimensionError, FormatError, netpbm.NetpbmError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except NumericError as exc:
        log.error("numeric error: %s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Run configuration: INI-style file with nested sections, defaults, and
provenance (every output directory gets the exact resolved config).

Sections: [extractor], [graph], [detector], [simulator], [run].
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field
from pathlib import Path

from .detector import DetectorConfig
from .errors import ContractError
from .features import ExtractorParams
from .graph import GraphConfig

ENV_OUT = "QPA_OUT"


@dataclass
class SimConfig:
    image_size: int = 64
    family_seed: int = 7
    victim_seed: int = 100
    sigma: float = 0.05
    query_cap: int = 5000
    anomaly_rate: float = 0.01
    baseline_threshold: float = 0.5


@dataclass
class RunConfig:
    extractor: ExtractorParams = field(default_factory=ExtractorParams)
    graph: GraphConfig = field(default_factory=GraphConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    seed: int = 0
    init_count: int = 1000
    init_seed: int = 11
    model_path: str = "model.json"
    out_dir: str = "qpa-out"

    def resolved_out_dir(self) -> Path:
        root = os.environ.get(ENV_OUT)
        if root:
            return Path(root) / self.out_dir
        return Path(self.out_dir)


_SCHEMA = {
    "extractor": [
        ("kind", str), ("grid", int), ("blur_sigma", float), ("q_step", int),
        ("window", int), ("set_length", int), ("hash_seed", int),
    ],
    "graph": [
        ("link_threshold", float), ("init_count", int), ("top_k", int),
        ("min_graph_size", int), ("evict_watermark", int),
        ("reset_every_queries", int), ("reset_period_hours", float),
    ],
    "detector": [
        ("alpha", float), ("classifier_threshold", float),
        ("include_singletons", bool), ("use_classifier", bool),
    ],
    "simulator": [
        ("image_size", int), ("family_seed", int), ("victim_seed", int),
        ("sigma", float), ("query_cap", int), ("anomaly_rate", float),
        ("baseline_threshold", float),
    ],
    "run": [
        ("seed", int), ("init_count", int), ("init_seed", int),
        ("model_path", str), ("out_dir", str),
    ],
}


def _parse_value(raw: str, kind):
    if kind is bool:
        v = raw.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ContractError(f"not a boolean: {raw!r}")
    if kind is int:
        return int(raw, 0)
    return kind(raw)


def load_config(path: Path | str | None = None) -> RunConfig:
    """Defaults, overridden by an INI file when given."""
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    with open(path, "r", encoding="utf-8") as fh:
        parser.read_file(fh)
    sections = {
        "extractor": {},
        "graph": {},
        "detector": {},
        "simulator": {},
        "run": {},
    }
    for section in parser.sections():
        if section not in sections:
            raise ContractError(f"unknown config section [{section}]")
        known = dict(_SCHEMA[section])
        for key, raw in parser.items(section):
            if key not in known:
                raise ContractError(f"unknown key {key!r} in [{section}]")
            sections[section][key] = _parse_value(raw, known[key])

    if sections["extractor"]:
        cfg.extractor = ExtractorParams(**sections["extractor"])
    if sections["graph"]:
        g = sections["graph"]
        if "link_threshold" in g and g["link_threshold"] <= 0.0:
            g["link_threshold"] = None
        cfg.graph = GraphConfig(**g)
    if sections["detector"]:
        cfg.detector = DetectorConfig(**sections["detector"])
    if sections["simulator"]:
        cfg.sim = SimConfig(**sections["simulator"])
    for key, value in sections["run"].items():
        setattr(cfg, key, value)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """Serialize the resolved config (written into output directories)."""
    parser = configparser.ConfigParser()
    parser["extractor"] = {
        "kind": cfg.extractor.kind,
        "grid": str(cfg.extractor.grid),
        "blur_sigma": repr(cfg.extractor.blur_sigma),
        "q_step": str(cfg.extractor.q_step),
        "window": str(cfg.extractor.window),
        "set_length": str(cfg.extractor.set_length),
        "hash_seed": str(cfg.extractor.hash_seed),
    }
    parser["graph"] = {
        "link_threshold": repr(cfg.graph.link_threshold if cfg.graph.link_threshold is not None else 0.0),
        "init_count": str(cfg.graph.init_count),
        "top_k": str(cfg.graph.top_k),
        "min_graph_size": str(cfg.graph.min_graph_size),
        "evict_watermark": str(cfg.graph.evict_watermark),
        "reset_every_queries": str(cfg.graph.reset_every_queries),
        "reset_period_hours": repr(cfg.graph.reset_period_hours),
    }
    parser["detector"] = {
        "alpha": repr(cfg.detector.alpha),
        "classifier_threshold": repr(cfg.detector.classifier_threshold),
        "include_singletons": str(cfg.detector.include_singletons).lower(),
        "use_classifier": str(cfg.detector.use_classifier).lower(),
    }
    parser["simulator"] = {
        "image_size": str(cfg.sim.image_size),
        "family_seed": str(cfg.sim.family_seed),
        "victim_seed": str(cfg.sim.victim_seed),
        "sigma": repr(cfg.sim.sigma),
        "query_cap": str(cfg.sim.query_cap),
        "anomaly_rate": repr(cfg.sim.anomaly_rate),
        "baseline_threshold": repr(cfg.sim.baseline_threshold),
    }
    parser["run"] = {
        "seed": str(cfg.seed),
        "init_count": str(cfg.init_count),
        "init_seed": str(cfg.init_seed),
        "model_path": cfg.model_path,
        "out_dir": cfg.out_dir,
    }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def write_provenance(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved.ini").write_text(dump_config(cfg), encoding="utf-8")

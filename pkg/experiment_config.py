"""
Experiment configuration: one TOML file per experiment.

    [experiment]  id, kind, seed, output_dir, templates, adversarial_aware,
                  template_dir, pricing
    [corpus]      root, layout, transformed_root, transformed_layout, pairing
    [filter]      min_loc, max_loc, min_files_per_author, language
    [cases]       n_same, n_diff, k, shots, n_in, n_out, n_queries
    [tournament]  subset_size, shots_per_author, template
    [backend]     kind, provider, model, ... (see BackendSettings)

Relative paths resolve against the directory holding the config file.
"""

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Optional, Tuple

from corpus_engine import CorpusLayout, FilterCriteria
from llm_backend import PROVIDERS
from prompt_engine import TIERS
from style_oracle import read_calibration


class ConfigError(ValueError):
    pass


class ExperimentKind(str, Enum):
    VERIFICATION = "verification"
    ATTRIBUTION = "attribution"
    TOURNAMENT = "tournament"
    ROBUSTNESS = "robustness"


BACKEND_KINDS = ("mock", "http")
EXPERIMENT_KEYS = (
    "id", "kind", "seed", "output_dir", "templates", "adversarial_aware", "template_dir", "pricing",
)


@dataclass(frozen=True)
class CorpusSettings:
    root: Optional[Path] = None
    layout: CorpusLayout = CorpusLayout.AUTHOR_DIRS
    transformed_root: Optional[Path] = None
    transformed_layout: CorpusLayout = CorpusLayout.MANIFEST
    pairing: Optional[Path] = None


@dataclass(frozen=True)
class CaseSettings:
    n_same: int = 100
    n_diff: int = 100
    k: Tuple[int, ...] = (3,)
    shots: Tuple[int, ...] = (1,)
    n_in: int = 100
    n_out: int = 100
    n_queries: int = 300


@dataclass(frozen=True)
class TournamentSettings:
    subset_size: int = 12
    shots_per_author: int = 1
    template: str = "P1"


@dataclass(frozen=True)
class BackendSettings:
    kind: str = "mock"
    provider: str = "openai"
    model: Optional[str] = None
    base_url: Optional[str] = None
    system_text: Optional[str] = None
    temperature: float = 0.0
    top_p: float = 1.0
    max_output_tokens: int = 256
    token_limit: int = 16000
    reserved_output_tokens: int = 256
    bytes_per_token: float = 4.0
    bytes_per_token_overrides: Dict[str, float] = field(default_factory=dict)
    max_in_flight: int = 4
    max_retries: int = 3
    timeout: float = 60.0
    max_consecutive_failures: int = 10
    # mock oracle knobs
    epsilon: float = 0.0
    unsure_rate: float = 0.0
    threshold: float = 0.5
    # JSON written by `codattr synth`; supplies threshold
    calibration: Optional[Path] = None


@dataclass(frozen=True)
class ExperimentConfig:
    id: str
    kind: ExperimentKind
    seed: int
    output_dir: Path = Path("runs")
    templates: Tuple[str, ...] = ("P1",)
    adversarial_aware: bool = False
    template_dir: Optional[Path] = None
    pricing: Optional[Path] = None
    corpus: CorpusSettings = field(default_factory=CorpusSettings)
    filter: FilterCriteria = field(default_factory=FilterCriteria)
    cases: CaseSettings = field(default_factory=CaseSettings)
    tournament: TournamentSettings = field(default_factory=TournamentSettings)
    backend: BackendSettings = field(default_factory=BackendSettings)
    source_text: str = field(default="", compare=False, repr=False)
    base_dir: Path = field(default=Path("."), compare=False, repr=False)
    backend_override: Optional[str] = field(default=None, compare=False)

    @property
    def run_dir(self) -> Path:
        return self.output_dir / self.id


# -----------------------------------------------------------
# PARSING
# -----------------------------------------------------------
def _build(cls, table, section: str, **converted):
    if not isinstance(table, dict):
        raise ConfigError(f"❌ [{section}] must be a table")
    known = {f.name for f in fields(cls) if f.init}
    unknown = sorted(set(table) - known)
    if unknown:
        raise ConfigError(f"❌ Unknown key(s) in [{section}]: {', '.join(unknown)}")
    values = {**table, **{k: v for k, v in converted.items() if k in table}}
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"❌ Invalid [{section}]: {e}")


def _path(value, base_dir: Path) -> Optional[Path]:
    if value is None:
        return None
    if not isinstance(value, str) or not value:
        raise ConfigError(f"❌ Expected a path string, got {value!r}")
    path = Path(value)
    return path if path.is_absolute() else base_dir / path


def _int_tuple(value, name: str) -> Tuple[int, ...]:
    values = value if isinstance(value, list) else [value]
    if not values or any(not isinstance(v, int) or isinstance(v, bool) or v < 1 for v in values):
        raise ConfigError(f"❌ [cases] {name} must be a positive integer or a list of them")
    return tuple(values)


def _check(cfg: ExperimentConfig):
    c = cfg.cases
    for name in ("n_same", "n_diff", "n_in", "n_out", "n_queries"):
        if getattr(c, name) < 0:
            raise ConfigError(f"❌ [cases] {name} must be >= 0")

    bad = [t for t in cfg.templates if t not in TIERS]
    if bad or not cfg.templates:
        raise ConfigError(f"❌ [experiment] templates must be drawn from {', '.join(TIERS)} (got {list(cfg.templates)})")
    if cfg.tournament.template not in TIERS:
        raise ConfigError(f"❌ [tournament] template must be one of {', '.join(TIERS)}")
    if cfg.tournament.subset_size < 2 or cfg.tournament.shots_per_author < 1:
        raise ConfigError("❌ [tournament] needs subset_size >= 2 and shots_per_author >= 1")

    b = cfg.backend
    if b.kind not in BACKEND_KINDS:
        raise ConfigError(f"❌ [backend] kind must be one of {', '.join(BACKEND_KINDS)}")
    if b.provider not in PROVIDERS:
        raise ConfigError(f"❌ [backend] provider must be one of {', '.join(PROVIDERS)}")
    if b.kind == "http" and not b.model:
        raise ConfigError("❌ [backend] model is required for the http backend")
    for name in ("epsilon", "unsure_rate", "threshold"):
        if not 0.0 <= getattr(b, name) <= 1.0:
            raise ConfigError(f"❌ [backend] {name} must be in [0, 1]")
    if b.token_limit <= b.reserved_output_tokens:
        raise ConfigError("❌ [backend] token_limit must exceed reserved_output_tokens")
    if b.max_in_flight < 1 or b.max_consecutive_failures < 1 or b.bytes_per_token <= 0:
        raise ConfigError("❌ [backend] max_in_flight, max_consecutive_failures and bytes_per_token must be positive")
    if not isinstance(b.bytes_per_token_overrides, dict):
        raise ConfigError("❌ [backend.bytes_per_token_overrides] must be a table of model = ratio")
    for model, ratio in b.bytes_per_token_overrides.items():
        if isinstance(ratio, bool) or not isinstance(ratio, (int, float)) or ratio <= 0:
            raise ConfigError(f"❌ [backend.bytes_per_token_overrides] {model} must be a positive number")

    if cfg.corpus.root is None:
        raise ConfigError(f"❌ [corpus] root is required for a {cfg.kind.value} experiment")
    if cfg.kind is ExperimentKind.ROBUSTNESS:
        if cfg.corpus.transformed_root is None or cfg.corpus.pairing is None:
            raise ConfigError("❌ Robustness experiments need [corpus] transformed_root and pairing")


def parse_config(text: str, base_dir=".") -> ExperimentConfig:
    base_dir = Path(base_dir)
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"❌ Config is not valid TOML: {e}")

    unknown = sorted(set(data) - {"experiment", "corpus", "filter", "cases", "tournament", "backend"})
    if unknown:
        raise ConfigError(f"❌ Unknown table(s): {', '.join(unknown)}")

    experiment = dict(data.get("experiment", {}))
    unknown = sorted(set(experiment) - set(EXPERIMENT_KEYS))
    if unknown:
        raise ConfigError(f"❌ Unknown key(s) in [experiment]: {', '.join(unknown)}")
    for required in ("id", "kind", "seed"):
        if required not in experiment:
            raise ConfigError(f"❌ [experiment] {required} is required")
    if not isinstance(experiment["seed"], int) or isinstance(experiment["seed"], bool):
        raise ConfigError("❌ [experiment] seed must be an integer")
    if not isinstance(experiment["id"], str) or not experiment["id"] or "/" in experiment["id"]:
        raise ConfigError("❌ [experiment] id must be a non-empty name without '/'")
    try:
        experiment["kind"] = ExperimentKind(experiment["kind"])
    except ValueError:
        raise ConfigError(f"❌ [experiment] kind must be one of {', '.join(k.value for k in ExperimentKind)}")

    raw_corpus = data.get("corpus", {})
    corpus = _build(
        CorpusSettings, raw_corpus, "corpus",
        root=_path(raw_corpus.get("root"), base_dir),
        transformed_root=_path(raw_corpus.get("transformed_root"), base_dir),
        pairing=_path(raw_corpus.get("pairing"), base_dir),
        layout=_enum(CorpusLayout, raw_corpus.get("layout"), "corpus", "layout"),
        transformed_layout=_enum(CorpusLayout, raw_corpus.get("transformed_layout"), "corpus", "transformed_layout"),
    )
    raw_cases = data.get("cases", {})
    cases = _build(
        CaseSettings, raw_cases, "cases",
        k=_int_tuple(raw_cases["k"], "k") if "k" in raw_cases else None,
        shots=_int_tuple(raw_cases["shots"], "shots") if "shots" in raw_cases else None,
    )

    cfg = _build(
        ExperimentConfig, experiment, "experiment",
        output_dir=_path(experiment.get("output_dir"), base_dir),
        template_dir=_path(experiment.get("template_dir"), base_dir),
        pricing=_path(experiment.get("pricing"), base_dir),
        templates=tuple(experiment.get("templates", ())),
    )
    cfg = replace(
        cfg,
        output_dir=cfg.output_dir if "output_dir" in experiment else base_dir / "runs",
        corpus=corpus,
        filter=_build(FilterCriteria, data.get("filter", {}), "filter"),
        cases=cases,
        tournament=_build(TournamentSettings, data.get("tournament", {}), "tournament"),
        backend=_backend(data.get("backend", {}), base_dir),
        source_text=text,
        base_dir=base_dir,
    )
    _check(cfg)
    return cfg


def _backend(raw, base_dir: Path) -> BackendSettings:
    backend = _build(
        BackendSettings, raw, "backend",
        calibration=_path(raw.get("calibration") if isinstance(raw, dict) else None, base_dir),
    )
    if backend.calibration is None:
        return backend
    if "threshold" in raw:
        raise ConfigError("❌ [backend] sets both threshold and calibration")
    try:
        return replace(backend, threshold=read_calibration(backend.calibration))
    except ValueError as e:
        raise ConfigError(str(e))


def _enum(enum_cls, value, section: str, name: str):
    if value is None:
        return None
    try:
        return enum_cls(value)
    except ValueError:
        raise ConfigError(f"❌ [{section}] {name} must be one of {', '.join(e.value for e in enum_cls)}")


def load_config(path, backend_override: Optional[str] = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"❌ Cannot read config {path}: {e}")

    cfg = parse_config(text, path.parent)
    if backend_override is not None:
        if backend_override not in BACKEND_KINDS:
            raise ConfigError(f"❌ --backend must be one of {', '.join(BACKEND_KINDS)}")
        cfg = replace(cfg, backend=replace(cfg.backend, kind=backend_override), backend_override=backend_override)
        _check(cfg)
    return cfg

"""Run configuration: flat ``section.key = value`` files.

Unknown keys are errors. Values are parsed by the type of the matching
dataclass field. Full-scale settings can be written out explicitly; the
defaults are the desk-scale ones used by the tests.
"""

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class SearchSection:
    B: int = 3
    G: int = 5
    P_num: int = 10
    E_w: int = 10
    E_s: int = 2
    M: int = 4
    seed: int = 0
    evaluator: str = "shared"  # shared | surrogate | scratch
    strategy: str = "growth"  # growth | flat


@dataclass
class SpaceSection:
    opset: str = "conv5"
    n_ops: int = 0  # 0 keeps every op of the named set


@dataclass
class SupernetSection:
    width: int = 8


@dataclass
class DataSection:
    source: str = "synthetic"  # synthetic | cifar10
    kind: str = "level"  # synthetic templates: level | texture
    classes: int = 4
    n: int = 640
    shape: str = "8,8,3"
    noise: float = 0.3
    seed: int = 1
    split: float = 0.8
    cifar_paths: str = ""


@dataclass
class TrainSection:
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 3e-4
    grad_clip: float = 5.0  # global gradient-norm cap, 0 disables


@dataclass
class EvalSection:
    batch_size: int = 128
    n_batches: int = 1  # per completion during evolution; 0 = whole validation set
    final_n_batches: int = 0


@dataclass
class VariationSection:
    crossover_rate: float = 0.9
    mutation_rate: float = 0.2
    retries: int = 3


@dataclass
class SelectionSection:
    protection: bool = True


@dataclass
class SurrogateSection:
    seed: int = 0


@dataclass
class StudySection:
    N: int = 40
    seeds: str = "0,1,2,3,4"
    scratch_epochs: int = 10


@dataclass
class Config:
    search: SearchSection = field(default_factory=SearchSection)
    space: SpaceSection = field(default_factory=SpaceSection)
    supernet: SupernetSection = field(default_factory=SupernetSection)
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    variation: VariationSection = field(default_factory=VariationSection)
    selection: SelectionSection = field(default_factory=SelectionSection)
    surrogate: SurrogateSection = field(default_factory=SurrogateSection)
    study: StudySection = field(default_factory=StudySection)

    def validate(self) -> "Config":
        s = self.search
        if s.B < 1 or s.G < 1 or s.P_num < 2:
            raise ConfigError("need B >= 1, G >= 1 and P_num >= 2")
        if s.E_w < 0 or s.E_s < 1 or s.M < 1:
            raise ConfigError("need E_w >= 0, E_s >= 1 and M >= 1")
        if s.evaluator not in ("shared", "surrogate", "scratch"):
            raise ConfigError(f"unknown evaluator {s.evaluator!r}")
        if s.strategy not in ("growth", "flat"):
            raise ConfigError(f"unknown strategy {s.strategy!r}")
        for name in ("crossover_rate", "mutation_rate"):
            if not 0 <= getattr(self.variation, name) <= 1:
                raise ConfigError(f"variation.{name} must lie in [0, 1]")
        if self.train.batch_size < 1 or self.eval.batch_size < 1:
            raise ConfigError("batch sizes must be positive")
        return self

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self.data.shape.split(","))

    @property
    def study_seeds(self) -> list[int]:
        return [int(v) for v in self.study.seeds.split(",") if v.strip()]

    def items(self):
        for sec in dataclasses.fields(self):
            section = getattr(self, sec.name)
            for f in dataclasses.fields(section):
                yield f"{sec.name}.{f.name}", getattr(section, f.name)

    def dumps(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.items())

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def set(self, dotted: str, raw) -> None:
        try:
            section_name, key = dotted.split(".", 1)
        except ValueError:
            raise ConfigError(f"key {dotted!r} is not of the form section.key") from None
        section = getattr(self, section_name, None)
        if section is None or not dataclasses.is_dataclass(section):
            raise ConfigError(f"unknown config section {section_name!r}")
        types = {f.name: f.type for f in dataclasses.fields(section)}
        if key not in types:
            raise ConfigError(f"unknown config key {dotted!r}")
        setattr(section, key, _parse(raw, types[key], dotted))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "on" if v else "off"
    return repr(v) if isinstance(v, float) else str(v)


def _parse(raw, typ, key):
    if not isinstance(raw, str):
        return typ(raw)
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("on", "true", "yes", "1"):
                return True
            if low in ("off", "false", "no", "0"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None


def loads_config(text: str, base: Config | None = None) -> Config:
    cfg = base if base is not None else Config()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = line.split("=", 1)
        try:
            cfg.set(key.strip(), value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return cfg.validate()


def load_config(path: str | Path) -> Config:
    return loads_config(Path(path).read_text())

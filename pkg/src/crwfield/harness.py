"""Command-line front end: experiment sweeps, single runs and condition audits.

Exit codes: 0 success or check passed, 1 check failed, 2 usage/config/runtime
error.  Relative output paths are resolved against ``$CRWFIELD_OUTPUT_DIR``
when it is set.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, rng
from .analysis import (
    CHECKS,
    CheckReport,
    SampleSpec,
    check_cor42,
    check_cor43,
    check_dp_inequality,
    check_remark3,
    check_thm41_cond1,
    check_thm41_cond2,
)
from .errors import ConfigParseError, CRWError, UnknownCheck
from .fields import (
    FIELD_KINDS,
    CostFunction,
    FieldSpec,
    Linear,
    Perturbation,
    cost_from_dict,
    make_field,
)
from .model import BUILTIN_NETWORKS, Network, alpha_vector, check_stabilizable, load_network
from .policy import Policy
from .sim import RunConfig, mean_by, rows_to_csv, run, sweep

log = logging.getLogger("crwfield")

OUTPUT_DIR_ENV = "CRWFIELD_OUTPUT_DIR"
BUNDLED_CONFIGS = ("fig51a.json", "fig51b.json", "tandem-exp.json", "tandem-modified.json")


# -- config handling -----------------------------------------------------------

def bundled_config_path(name: str) -> Path:
    return Path(str(resources.files("crwfield") / "configs" / name))


def _read_json(path) -> dict:
    p = Path(path)
    if not p.exists() and p.name == str(path):
        name = p.name if p.suffix == ".json" else p.name + ".json"
        if bundled_config_path(name).exists():
            p = bundled_config_path(name)
    try:
        with open(p, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigParseError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigParseError(f"{path}: top level must be a JSON object")
    return doc


def resolve_output(path: str | os.PathLike) -> Path:
    p = Path(path)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _network(doc) -> Network:
    try:
        return load_network(doc)
    except (KeyError, TypeError, ValueError, OSError) as exc:
        raise ConfigParseError(f"bad network: {exc}") from exc


def _cost(doc, m: int) -> CostFunction:
    if doc is None:
        return Linear((1.0,) * m)
    try:
        return cost_from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigParseError(f"bad cost: {exc}") from exc


def _field_spec(doc) -> FieldSpec:
    if not isinstance(doc, dict):
        raise ConfigParseError("field must be a JSON object")
    try:
        return FieldSpec.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigParseError(f"bad field spec: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    network: Network
    policies: tuple  # ((label, FieldSpec), ...)
    cost: CostFunction
    alphas: tuple
    horizon: int
    seeds: tuple
    output_path: str
    network_doc: object = None

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        for key in ("network", "policies", "alphas", "horizon", "seeds"):
            if key not in doc:
                raise ConfigParseError(f"missing key {key!r}")
        net = _network(doc["network"])
        pols = doc["policies"]
        if not isinstance(pols, list) or not pols:
            raise ConfigParseError("policies must be a non-empty list")
        policies = []
        for p in pols:
            if not isinstance(p, dict) or "label" not in p or "field" not in p:
                raise ConfigParseError("each policy needs 'label' and 'field'")
            policies.append((str(p["label"]), _field_spec(p["field"])))
        labels = [lab for lab, _ in policies]
        if len(set(labels)) != len(labels):
            raise ConfigParseError("policy labels must be unique")
        alphas = doc["alphas"]
        if not isinstance(alphas, list) or not alphas:
            raise ConfigParseError("alphas must be a non-empty list")
        seeds = doc["seeds"]
        if not isinstance(seeds, list) or not seeds:
            raise ConfigParseError("seeds must be a non-empty list")
        try:
            alphas = tuple(float(a) for a in alphas)
            seeds = tuple(int(s) for s in seeds)
            horizon = int(doc["horizon"])
        except (TypeError, ValueError) as exc:
            raise ConfigParseError(f"bad grid: {exc}") from exc
        if horizon < 1:
            raise ConfigParseError("horizon must be >= 1")
        return cls(net, tuple(policies), _cost(doc.get("cost"), net.m), alphas, horizon, seeds,
                   str(doc.get("output_path", "sweep.csv")), doc["network"])

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(_read_json(path))

    def canonical(self) -> dict:
        """Everything that changes the simulated numbers; excludes output location."""
        return {
            "network": self.network.spec().to_dict(),
            "policies": [[lab, spec.to_dict()] for lab, spec in self.policies],
            "cost": self.cost.to_dict(),
            "alphas": list(self.alphas),
            "horizon": self.horizon,
            "seeds": list(self.seeds),
            "rng": rng.ALGORITHM,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def warn_unstabilizable(cfg: ExperimentConfig) -> list[float]:
    bad = []
    for a in cfg.alphas:
        rep = check_stabilizable(cfg.network.with_alpha(alpha_vector(cfg.network, a)))
        if not rep.stabilizable:
            log.warning("alpha=%g is not stabilizable (margin %.3g); runs will drift", a, rep.margin)
            bad.append(a)
    return bad


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def gnuplot_table(rows, labels: Sequence[str]) -> str:
    """Mean ``avg_cost`` per load, one whitespace-separated column per policy."""
    means = mean_by(rows)
    alphas = sorted({a for _, a in means})
    lines = ["# alpha " + " ".join(lab.replace(" ", "_") for lab in labels)]
    for a in alphas:
        lines.append(" ".join([repr(a)] + [repr(means[(lab, a)]) for lab in labels]))
    return "\n".join(lines) + "\n"


def run_experiment(config_path, out: str | None = None, jobs: int = 1,
                   seed: int | None = None, horizon: int | None = None) -> Path:
    """Run a sweep config; writes the CSV, a JSON sidecar and a gnuplot table."""
    cfg = ExperimentConfig.load(config_path)
    if seed is not None:
        cfg = ExperimentConfig(**{**cfg.__dict__, "seeds": (int(seed),)})
    if horizon is not None:
        cfg = ExperimentConfig(**{**cfg.__dict__, "horizon": int(horizon)})
    warn_unstabilizable(cfg)
    policies = {lab: make_field(spec) for lab, spec in cfg.policies}
    rows = sweep(cfg.network, policies, cfg.alphas, cfg.seeds, cfg.horizon, cfg.cost, jobs=jobs)
    path = resolve_output(out or cfg.output_path)
    _write_text(path, rows_to_csv(rows))
    _write_text(path.with_suffix(".dat"), gnuplot_table(rows, [lab for lab, _ in cfg.policies]))
    meta = {
        "config_hash": cfg.config_hash(),
        "version": __version__,
        "rng": rng.ALGORITHM,
        "rows": len(rows),
        "config": cfg.canonical(),
    }
    _write_text(path.with_suffix(".json"), json.dumps(meta, indent=2) + "\n")
    return path


def _single_from_experiment(doc: dict, label: str | None, alpha: float | None) -> dict:
    exp = ExperimentConfig.from_dict(doc)
    by_label = dict(exp.policies)
    if label is None:
        label = exp.policies[0][0]
    if label not in by_label:
        raise ConfigParseError(f"no policy labelled {label!r}; have {sorted(by_label)}")
    return {
        "network": doc["network"],
        "policy": by_label[label].to_dict(),
        "cost": exp.cost.to_dict(),
        "alpha": exp.alphas[0] if alpha is None else alpha,
        "horizon": exp.horizon,
        "seed": exp.seeds[0],
    }


def run_single(config_path, out: str | None = None, seed: int | None = None,
               horizon: int | None = None, trace: bool = False,
               label: str | None = None, alpha: float | None = None) -> dict:
    """One trajectory: ``network``, ``policy`` (field spec), ``cost``, optional
    ``alpha``, ``horizon`` and ``seed``.

    An experiment config is also accepted; ``label`` picks the policy (first
    by default) and ``alpha`` the load (first grid value by default).
    """
    doc = _read_json(config_path)
    if "policies" in doc and "policy" not in doc:
        doc = _single_from_experiment(doc, label, alpha)
    elif alpha is not None:
        doc = {**doc, "alpha": alpha}
    if "network" not in doc or "policy" not in doc:
        raise ConfigParseError("simulate config needs 'network' and 'policy'")
    net = _network(doc["network"])
    if doc.get("alpha") is not None:
        net = net.with_alpha(alpha_vector(net, doc["alpha"]))
    cost = _cost(doc.get("cost"), net.m)
    spec = _field_spec(doc["policy"])
    n = int(horizon if horizon is not None else doc.get("horizon", 10_000))
    s = int(seed if seed is not None else doc.get("seed", 0))
    metrics, tr = run(RunConfig(net, Policy(net, make_field(spec)), n, s, cost, record_trace=trace))
    result = dict(metrics.__dict__)
    if out:
        path = resolve_output(out)
        _write_text(path, json.dumps(result, indent=2) + "\n")
        if trace:
            _write_text(path.with_suffix(".trace.csv"), tr.to_csv())
    elif trace:
        _write_text(resolve_output("trace.csv"), tr.to_csv())
    return result


# -- checks --------------------------------------------------------------------

def _sample(doc: dict, overrides: dict | None) -> SampleSpec:
    d = dict(doc.get("sample") or {})
    d.update(overrides or {})
    try:
        return SampleSpec(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigParseError(f"bad sample spec: {exc}") from exc


def _field_dim(doc: dict, spec: FieldSpec) -> int:
    if "m" in doc:
        return int(doc["m"])
    if spec.expressions:
        return len(spec.expressions)
    for attr in ("c", "D"):
        if spec.cost is not None and hasattr(spec.cost, attr):
            return len(getattr(spec.cost, attr))
    if spec.D is not None:
        return len(spec.D)
    return 2


def run_check(config_path, check_name: str, sample_overrides: dict | None = None) -> CheckReport:
    """Run one audit described by a JSON document.

    Keys: ``field`` (field spec), ``eps``, optional ``m`` and ``sample``; the
    ``cor43`` audit takes ``cost``, ``perturbation`` and ``theta`` instead of a
    field; ``dp`` additionally takes ``network``, ``cost`` and ``states``.
    """
    if check_name not in CHECKS:
        raise UnknownCheck(f"unknown check {check_name!r}; known: {', '.join(CHECKS)}")
    doc = _read_json(config_path)
    sample = _sample(doc, sample_overrides)
    try:
        if check_name == "cor43":
            cost = _cost(doc.get("cost"), 2)
            pert = Perturbation(str(doc.get("perturbation", "log")), float(doc.get("theta", 1.0)))
            return check_cor43(cost, pert, float(doc.get("eps", 0.1)), sample)
        if "field" not in doc:
            raise ConfigParseError("check config needs a 'field'")
        spec = _field_spec(doc["field"])
        fld = make_field(spec)
        if check_name == "dp":
            net = _network(doc.get("network", "tandem2"))
            cost = _cost(doc.get("cost"), net.m)
            states = doc.get("states")
            if not states:
                raise ConfigParseError("dp check needs a non-empty 'states' list")
            return check_dp_inequality(fld, cost, net, [np.asarray(s, dtype=float) for s in states])
        m = _field_dim(doc, spec)
        fn = {"thm41-1": check_thm41_cond1, "thm41-2": check_thm41_cond2,
              "cor42": check_cor42, "remark3": check_remark3}[check_name]
        return fn(fld, float(doc.get("eps", 0.1)), sample, m=m)
    except (KeyError, TypeError) as exc:
        raise ConfigParseError(f"bad check config: {exc}") from exc


def render_report(rep: CheckReport) -> str:
    lines = [
        f"check              {rep.check}",
        f"passed             {'yes' if rep.passed else 'no'}",
        f"witness threshold  {rep.witness_threshold if rep.witness_threshold is not None else '-'}",
        f"worst violation    {rep.worst_violation:.6g}",
    ]
    radii = rep.details.get("shell_radii")
    if radii:
        lines.append("shell radius       max measured")
        lines += [f"  {r:<16g} {v:.6g}" for r, v in zip(radii, rep.details["shell_max"])]
    if rep.counterexamples:
        lines.append(f"counterexamples    {len(rep.counterexamples)} (first shown)")
        first = rep.counterexamples[0]
        lines += [f"  {k}: {np.asarray(v).tolist() if isinstance(v, np.ndarray) else v}" for k, v in first.items()]
    return "\n".join(lines)


def list_examples() -> dict:
    return {
        "networks": {name: desc for name, (_, desc) in BUILTIN_NETWORKS.items()},
        "configs": {name: _read_json(bundled_config_path(name)).get("description", "") for name in BUNDLED_CONFIGS},
        "fields": dict(FIELD_KINDS),
        "checks": list(CHECKS),
    }


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crwfield", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one trajectory and print its metrics")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--horizon", type=int)
    s.add_argument("--out")
    s.add_argument("--trace", action="store_true", help="also write the per-slot trace CSV")
    s.add_argument("--policy", help="policy label when the config is an experiment grid")
    s.add_argument("--alpha", type=float, help="load override")

    w = sub.add_parser("sweep", help="run a policy x load x seed grid and write CSV")
    w.add_argument("--config", required=True)
    w.add_argument("--seed", type=int, help="replace the seed list with this one seed")
    w.add_argument("--horizon", type=int)
    w.add_argument("--out")
    w.add_argument("--jobs", type=int, default=1)

    c = sub.add_parser("check", help="audit a field against a stability condition")
    c.add_argument("name", help=", ".join(CHECKS))
    c.add_argument("--config", required=True)
    c.add_argument("--seed", type=int, help="sampling seed")
    c.add_argument("--out")
    c.add_argument("--json", action="store_true", help="print the JSON report")

    e = sub.add_parser("list-examples", help="built-in networks, configs and field kinds")
    e.add_argument("--json", action="store_true")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list-examples":
            ex = list_examples()
            if args.json:
                names = list(ex["networks"]) + list(ex["configs"]) + list(ex["fields"])
                print(json.dumps(names))
            else:
                for section, items in (("networks", ex["networks"]), ("configs", ex["configs"]),
                                       ("fields", ex["fields"])):
                    print(f"{section}:")
                    for name, desc in items.items():
                        print(f"  {name:<18} {desc}")
            return 0
        if args.command == "simulate":
            res = run_single(args.config, args.out, args.seed, args.horizon, args.trace,
                             args.policy, args.alpha)
            print(json.dumps(res, indent=2))
            return 0
        if args.command == "sweep":
            path = run_experiment(args.config, args.out, args.jobs, args.seed, args.horizon)
            print(path)
            return 0
        if args.command == "check":
            overrides = {"rng_seed": args.seed} if args.seed is not None else None
            rep = run_check(args.config, args.name, overrides)
            text = rep.to_json()
            if args.out:
                _write_text(resolve_output(args.out), text + "\n")
            print(text if args.json else render_report(rep))
            return 0 if rep.passed else 1
    except (CRWError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())

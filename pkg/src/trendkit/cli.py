"""``trendkit`` command line: ingest a long-format CSV, run a trend test, emit a report.

Exit codes: 0 success, 1 usage error, 2 analysis or ingestion error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import __version__
from .datasets import EMBEDDED, Dataset, ingest
from .design import ContrastMatrix, DoseDesign
from .errors import ConvergenceError, TrendkitError
from .glm import Family, family_from_name
from .inference import (
    DownturnDecision,
    build_marginal_set,
    downturn_guard,
    pairwise_test,
    run_pipeline,
)
from .mmm import MarginalSet, combine
from .mvt import DEFAULT_SEED, DEFAULT_TOL
from .polyk import IDENTITY_BINOMIAL, PolyKRecords, polyk_marginal_set
from .report import FORMATS, Report, from_inference, render

__all__ = ["TrendOptions", "run_trend", "build_parser", "main", "UsageError"]

log = logging.getLogger("trendkit")

SCALINGS = ("ari", "ord", "arilog", "treat")
CTYPES = ("williams", "dunnett", "both")
VCOVS = ("classic", "hc0", "hc3")
ALTERNATIVES = ("greater", "less", "two-sided")
FAMILIES = ("gaussian", "binomial-logit", "binomial-identity", "poisson")


class UsageError(Exception):
    """Invalid or incompatible options (exit code 1)."""


@dataclass
class TrendOptions:
    response: str | None = None
    dose: str = "dose"
    scalings: tuple[str, ...] = ("ari", "ord", "arilog", "treat")
    ctype: str = "williams"
    contrasts: tuple[tuple[float, ...], ...] | None = None
    vcov: str = "hc0"
    alternative: str = "greater"
    alpha: float = 0.05
    family: str = "gaussian"
    dispersion: str = "fixed"
    trials: str | None = None
    add1: bool = False
    polyk: tuple[float, ...] = ()
    time: str | None = None
    tumor: str | None = None
    tmax: float | None = None
    covariates: tuple[str, ...] = ()
    study: str | None = None
    df_rule: str = "min_marginal"
    seed: int = DEFAULT_SEED
    mvt_tol: float = DEFAULT_TOL

    def validate(self) -> None:
        bad = [s for s in self.scalings if s not in SCALINGS]
        if bad or not self.scalings:
            raise UsageError(f"--scaling takes a non-empty subset of {','.join(SCALINGS)}")
        if len(set(self.scalings)) != len(self.scalings):
            raise UsageError("--scaling lists a value twice")
        if self.ctype not in CTYPES:
            raise UsageError(f"--ctype must be one of {CTYPES}")
        if self.vcov not in VCOVS:
            raise UsageError(f"--vcov must be one of {VCOVS}")
        if self.alternative not in ALTERNATIVES:
            raise UsageError(f"--alternative must be one of {ALTERNATIVES}")
        if not 0 < self.alpha < 1:
            raise UsageError("--alpha must lie strictly between 0 and 1")
        if self.family not in FAMILIES:
            raise UsageError(f"--family must be one of {FAMILIES}")
        if self.dispersion not in ("fixed", "pearson"):
            raise UsageError("--dispersion must be fixed or pearson")
        if not self.mvt_tol > 0:
            raise UsageError("--mvt-tol must be positive")
        if self.contrasts is not None and "treat" not in self.scalings:
            raise UsageError("--contrasts requires 'treat' in --scaling")
        if self.polyk:
            if self.time is None or self.tumor is None:
                raise UsageError("--polyk requires --time and --tumor columns")
            if self.family not in ("gaussian", "binomial-identity"):
                raise UsageError("--polyk always fits a binomial identity-link model; drop --family")
            if self.trials or self.response:
                raise UsageError("--polyk works on per-animal records; drop --response and --trials")
            if self.dispersion != "fixed":
                raise UsageError("--dispersion pearson is not supported with --polyk")
            if any(not k > 0 for k in self.polyk):
                raise UsageError("--polyk exponents must be positive")
        else:
            if self.time is not None or self.tmax is not None:
                raise UsageError("--time and --tmax are only meaningful with --polyk")
            if self.tumor is not None:
                raise UsageError("--tumor is only meaningful with --polyk; use --response for counts")
            if self.response is None:
                raise UsageError("--response is required")
            if self.family == "gaussian":
                if self.add1:
                    raise UsageError("--add1 applies to binomial families only")
                if self.dispersion != "fixed":
                    raise UsageError("--dispersion applies to binomial and poisson families only")
                if self.trials is not None:
                    raise UsageError("--trials applies to binomial families only")
            elif self.family == "poisson":
                if self.add1 or self.trials is not None:
                    raise UsageError("--add1 and --trials apply to binomial families only")
        if self.add1 and (self.covariates or self.study):
            raise UsageError("--add1 pseudo-observations cannot carry covariate or study values")

    @property
    def model_scalings(self) -> tuple[str, ...]:
        return tuple(s for s in self.scalings if s != "treat")

    @property
    def contrast_type(self) -> str | None:
        return self.ctype if "treat" in self.scalings else None


def _design_columns(ds: Dataset, opts: TrendOptions) -> np.ndarray | None:
    cols = [ds.numeric(c) for c in opts.covariates]
    if opts.study:
        levels = sorted(set(ds.text(opts.study)))
        values = ds.text(opts.study)
        for lev in levels[1:]:
            cols.append(np.array([v == lev for v in values], dtype=float))
    return np.column_stack(cols) if cols else None


def _title(opts: TrendOptions) -> str:
    parts = []
    if opts.model_scalings:
        parts.append("Tukey")
    if opts.contrast_type:
        parts.append({"williams": "Williams", "dunnett": "Dunnett", "both": "Dunnett/Williams"}[opts.contrast_type])
    if opts.contrasts is not None:
        parts[-1] = "user contrast"
    name = "-".join(parts) + " trend test"
    if opts.polyk:
        name = "Poly-k " + name
    return name[0].upper() + name[1:]


def _high_vs_control(mset: MarginalSet, dose: np.ndarray):
    labels = DoseDesign.from_unit_doses(dose).labels
    target = f": {labels[-1]}-{labels[0]}"
    for m in mset.models:
        if m.label.endswith(target) and ("Williams" in m.label or "Dunnett" in m.label):
            return m
    return None


def _marginal_set(ds: Dataset, opts: TrendOptions):
    """Build the max-T family and return it with the family and dose vector."""
    dose = ds.numeric(opts.dose)
    Z = _design_columns(ds, opts)
    ids: list = list(ds.lines)
    contrasts = None
    if opts.contrasts is not None:
        rows = np.array(opts.contrasts, dtype=float)
        contrasts = ContrastMatrix(rows, tuple(f"C{i + 1}" for i in range(rows.shape[0])))
    common = dict(scalings=opts.model_scalings, ctype=opts.contrast_type, vcov=opts.vcov, covariates=Z)

    if opts.polyk:
        recs = PolyKRecords(dose, ds.numeric(opts.time), ds.numeric(opts.tumor), opts.tmax)
        if contrasts is not None:
            raise UsageError("--contrasts is not supported together with --polyk")
        mset = combine([polyk_marginal_set(recs, k, add1=opts.add1, **common) for k in opts.polyk])
        if opts.add1:
            levels = np.unique(dose)
            ids = ids + [f"add1:{d:g}" for d in levels]
        mset = MarginalSet(mset.models, tuple(ids), mset.name)
        return mset, IDENTITY_BINOMIAL, dose

    y = ds.numeric(opts.response)
    family: Family | None = None
    trials = None
    if opts.family != "gaussian":
        family = family_from_name(opts.family, opts.dispersion)
        if family.kind == "binomial":
            trials = ds.numeric(opts.trials) if opts.trials else np.ones_like(y)
    if opts.add1:
        levels = np.unique(dose)
        y = np.concatenate([y, np.ones(levels.size)])
        trials = np.concatenate([trials, np.full(levels.size, 2.0)])
        dose = np.concatenate([dose, levels])
        ids = ids + [f"add1:{d:g}" for d in levels]
    mset = build_marginal_set(
        y, dose, family=family, trials=trials, contrasts=contrasts, unit_ids=ids, **common
    )
    return mset, family, dose


def run_trend(ds: Dataset, opts: TrendOptions) -> Report:
    """Run the configured analysis on an ingested dataset."""
    opts.validate()
    mset, family, dose = _marginal_set(ds, opts)
    alternative = opts.alternative.replace("-", "_")
    result = run_pipeline(mset, family, alternative, opts.alpha, opts.df_rule, opts.mvt_tol, opts.seed)
    decision: DownturnDecision | None = None
    hv = _high_vs_control(mset, dose)
    if hv is not None:
        decision = downturn_guard(result, pairwise_test(hv, alternative), opts.alpha)
    options = asdict(opts)
    options["scalings"] = list(opts.scalings)
    options["polyk"] = list(opts.polyk)
    options["covariates"] = list(opts.covariates)
    if opts.contrasts is not None:
        options["contrasts"] = [list(r) for r in opts.contrasts]
    metadata = {
        "tool": "trendkit",
        "version": __version__,
        "title": _title(opts),
        "dataset": {
            "name": ds.name,
            "sha256": ds.sha256,
            "rows_read": ds.n_read,
            "rows_used": ds.n_used,
            "rows_rejected": [{"line": ln, "reason": r} for ln, r in ds.rejected],
        },
        "options": options,
    }
    return from_inference(result, metadata, decision)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class _Once(argparse.Action):
    """Store action that rejects a repeated flag."""

    def __call__(self, parser, namespace, values, option_string=None):
        seen = namespace.__dict__.setdefault("_seen", set())
        if self.dest in seen:
            parser.error(f"{option_string} given more than once")
        seen.add(self.dest)
        setattr(namespace, self.dest, values)


class _OnceFlag(_Once):
    def __init__(self, option_strings, dest, **kw):
        super().__init__(option_strings, dest, nargs=0, default=False, **kw)

    def __call__(self, parser, namespace, values, option_string=None):
        super().__call__(parser, namespace, True, option_string)


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in _csv_list(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _matrix(text: str) -> tuple[tuple[float, ...], ...]:
    rows = [r for r in text.split(";") if r.strip()]
    if not rows:
        raise argparse.ArgumentTypeError("empty contrast matrix")
    return tuple(_float_list(r) for r in rows)


def _df_rule(text: str) -> str:
    t = text.strip().lower()
    if t in ("min_marginal", "infinite", "inf"):
        return t
    try:
        v = float(t.removeprefix("fixed:"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected min_marginal, infinite, fixed:<df> or a number") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("degrees of freedom must be positive")
    return f"fixed:{v:g}"


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trendkit", description="Dose-response trend tests with max-T multiplicity adjustment.")
    p.add_argument("--version", action="version", version=f"trendkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a trend test on a CSV file or embedded dataset")
    a = r.add_argument
    a("--data", action=_Once, required=True, help=f"CSV path or embedded name ({', '.join(EMBEDDED)})")
    a("--response", action=_Once, help="response column (successes for binomial families)")
    a("--dose", action=_Once, default="dose", help="dose column (default: dose)")
    a("--scaling", action=_Once, type=_csv_list, default=["ari", "ord", "arilog", "treat"],
      help="comma list from ari,ord,arilog,treat (default: all)")
    a("--ctype", action=_Once, choices=CTYPES, default="williams")
    a("--contrasts", action=_Once, type=_matrix, help="explicit contrast rows, e.g. --contrasts='-1,0,1;-1,1,0'")
    a("--vcov", action=_Once, choices=VCOVS, default="hc0")
    a("--alternative", action=_Once, choices=ALTERNATIVES, default="greater")
    a("--alpha", action=_Once, type=float, default=0.05)
    a("--family", action=_Once, choices=FAMILIES, default="gaussian")
    a("--dispersion", action=_Once, choices=("fixed", "pearson"), default="fixed")
    a("--trials", action=_Once, help="binomial trials column (default: 1 per row)")
    a("--add1", action=_OnceFlag, help="add one pseudo-success in two trials per dose group")
    a("--polyk", action=_Once, type=_float_list, default=(), help="poly-k exponents, e.g. 3 or 1.5,3,6")
    a("--time", action=_Once, help="time-of-death column (poly-k)")
    a("--tumor", action=_Once, help="tumor indicator column (poly-k)")
    a("--tmax", action=_Once, type=float, help="study length (default: latest death time)")
    a("--covariate", action="append", default=[], help="numeric covariate column (repeatable)")
    a("--study", action=_Once, help="study column entered as fixed effects")
    a("--df-rule", action=_Once, type=_df_rule, default="min_marginal")
    a("--seed", action=_Once, type=int, help="lattice seed (default: $TRENDKIT_SEED or 42)")
    a("--mvt-tol", action=_Once, type=float, default=DEFAULT_TOL)
    a("--format", action=_Once, choices=FORMATS, default="text")
    a("--out", action=_Once, help="write the report here instead of stdout")
    a("--quiet", action=_OnceFlag, help="do not log rejected rows")

    d = sub.add_parser("datasets", help="list the embedded datasets")
    d.add_argument("--show", action=_Once, choices=tuple(EMBEDDED), help="print one dataset as CSV")

    rr = sub.add_parser("render", help="re-render a JSON report")
    rr.add_argument("report", help="JSON report path")
    rr.add_argument("--format", action=_Once, choices=FORMATS, default="text")
    rr.add_argument("--out", action=_Once)
    return p


def _resolve_seed(arg: int | None) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("TRENDKIT_SEED")
    if env is None or not env.strip():
        return DEFAULT_SEED
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"TRENDKIT_SEED must be an integer, got {env!r}") from None


def options_from_args(ns: argparse.Namespace) -> TrendOptions:
    if len(set(ns.covariate)) != len(ns.covariate):
        raise UsageError("--covariate lists a column twice")
    return TrendOptions(
        response=ns.response,
        dose=ns.dose,
        scalings=tuple(ns.scaling),
        ctype=ns.ctype,
        contrasts=ns.contrasts,
        vcov=ns.vcov,
        alternative=ns.alternative,
        alpha=ns.alpha,
        family=ns.family,
        dispersion=ns.dispersion,
        trials=ns.trials,
        add1=ns.add1,
        polyk=tuple(ns.polyk),
        time=ns.time,
        tumor=ns.tumor,
        tmax=ns.tmax,
        covariates=tuple(ns.covariate),
        study=ns.study,
        df_rule=ns.df_rule,
        seed=_resolve_seed(ns.seed),
        mvt_tol=ns.mvt_tol,
    )


def _emit(data: bytes, out: str | None) -> None:
    if out is None:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


def _required_columns(opts: TrendOptions) -> list[str]:
    cols = [opts.response, opts.trials, opts.time, opts.tumor, opts.study, *opts.covariates]
    return [c for c in cols if c]


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="trendkit: %(message)s")
    try:
        if ns.command == "datasets":
            if ns.show:
                from .datasets import load_embedded

                _emit(load_embedded(ns.show), None)
            else:
                for name in EMBEDDED:
                    ds = ingest(name)
                    print(f"{name}\t{ds.n_used} rows\tcolumns: {', '.join(ds.header)}")
            return 0
        if ns.command == "render":
            try:
                with open(ns.report, encoding="utf-8") as fh:
                    report = Report.from_json(fh.read())
            except (OSError, ValueError, KeyError, TypeError) as exc:
                print(f"trendkit: error: cannot read report {ns.report}: {exc}", file=sys.stderr)
                return 2
            _emit(render(report, ns.format, ns.out), ns.out)
            return 0

        if ns.quiet:
            logging.getLogger().setLevel(logging.ERROR)
        opts = options_from_args(ns)
        opts.validate()
        ds = ingest(ns.data, _required_columns(opts), dose=opts.dose)
        report = run_trend(ds, opts)
        _emit(render(report, ns.format, ns.out), ns.out)
        return 0
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"trendkit: error: {exc}", file=sys.stderr)
        return 1
    except (TrendkitError, ValueError, ArithmeticError, OSError) as exc:
        print(f"trendkit: error: {exc}", file=sys.stderr)
        if isinstance(exc, ConvergenceError) and ns.command == "run" and ns.family.startswith("binomial"):
            if ns.covariate or ns.study:
                hint = "a group with zero or full counts separates; drop --covariate/--study and use --add1"
            else:
                hint = "zero or full tumor counts in a group often need --add1"
            print(f"trendkit: hint: {hint}", file=sys.stderr)
        return 2


def _entry() -> None:  # pragma: no cover
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    _entry()

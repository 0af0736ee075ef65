"""Command-line driver.

Every command writes CSV or JSON to ``--out`` (stdout by default). Failures
print a JSON object ``{"error", "message", ...}`` on stderr and exit with
status 2; a validation whose thresholds are breached exits with status 1.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import asdict, replace
from datetime import date
from importlib import resources
from pathlib import Path

import numpy as np

from . import analysis, dataio
from .calendar import Calendar
from .errors import CurveError, DataError, DomainError
from .futures import ContractKind, FuturesContract
from .models import ModelParams, ModelSpec, Variant

SHADOW_NEAR_BOUND = (0.0015, -0.0013, -0.0010)
OPTION_NEAR_BOUND = (-0.005, -0.005, -0.005)
APPROX_LIMITS = {ContractKind.ONE_MONTH: 1e-4, ContractKind.THREE_MONTH: 1e-7}
SHADOW_LIMIT_BP = 0.25
OPTION_RATIO_LIMIT = 0.25


class ValidationFailed(Exception):
    pass


# ---------------------------------------------------------------------------
# shared helpers


def fixture_params() -> ModelParams:
    text = resources.files("sofrcurve").joinpath("data/fixture_params.json").read_text()
    return ModelParams.from_dict(json.loads(text))


def _params(args, cfg: dataio.RunConfig | None = None) -> ModelParams:
    path = getattr(args, "params", None) or (cfg.params if cfg else None)
    p = dataio.read_params(path) if path else fixture_params()
    variant = getattr(args, "variant", None) or (cfg.variant if cfg and cfg.params is None else None)
    if variant and Variant(variant) is not p.variant:
        if {Variant(variant), p.variant} != {Variant.AFNS3, Variant.SHADOW_AFNS3}:
            raise DomainError(f"cannot switch {p.variant.value} parameters to {variant}")
        p = replace(p, spec=ModelSpec(Variant(variant)))
    return p


def _h_sd(args, n_groups: int, cfg: dataio.RunConfig | None = None) -> np.ndarray:
    path = getattr(args, "params", None) or (cfg.params if cfg else None)
    if path:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        sd = data.get("measurement_error_sd")
        if sd:
            vals = list(sd.values())
            if len(vals) == n_groups:
                return np.array(vals, dtype=float)
    return np.full(n_groups, args.h_sd)


def _state(args, params: ModelParams, default=None) -> np.ndarray:
    if getattr(args, "state", None):
        try:
            x = np.array([float(v) for v in args.state.split(",")])
        except ValueError as exc:
            raise DomainError(f"bad state {args.state!r}") from exc
        if x.shape != (params.n,):
            raise DomainError(f"state needs {params.n} comma-separated values")
        return x
    return params.thetaP.copy() if default is None else np.asarray(default, dtype=float)


def _mc(args):
    from .montecarlo import McConfig, Scheme

    return McConfig(n_paths=args.paths, dt=args.dt, seed=args.seed,
                    scheme=Scheme(args.scheme), block_size=min(args.block_size, args.paths))


def _calendar(args, cfg: dataio.RunConfig | None = None) -> Calendar:
    if getattr(args, "calendar", None):
        return Calendar.from_file(args.calendar)
    return cfg.calendar_obj() if cfg else Calendar.usny()


class _Output:
    """Collects text and writes it to a file or stdout in one go."""

    def __init__(self, target: str | None):
        self.target = target

    def csv(self, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([dataio._fmt(v) for v in row])
        self._emit(buf.getvalue())

    def json(self, obj):
        self._emit(dataio.dumps(obj) + "\n")

    def _emit(self, text: str):
        if self.target and self.target != "-":
            Path(self.target).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)


def _load(cfg: dataio.RunConfig, cal: Calendar) -> dataio.LoadedPanel:
    if cfg.quotes is None:
        raise DataError("configuration has no [data] quotes file")
    fixings = dataio.read_fixings(cfg.fixings) if cfg.fixings else {}
    return dataio.load_panel(dataio.read_quotes(cfg.quotes), fixings, cal, cfg.n_1m, cfg.n_3m)


def _filtered_states(params, loaded, h_sd, grouping):
    from .estimation import run_filter

    run = run_filter(params, loaded.panel, np.asarray(h_sd) ** 2, grouping, keep=True)
    return run.means


# ---------------------------------------------------------------------------
# commands


def cmd_estimate(args):
    from .estimation import EstimationOptions, HGrouping, estimate, rolling_estimates

    cfg = dataio.load_config(args.config)
    cal = _calendar(args, cfg)
    loaded = _load(cfg, cal)
    init = _params(args, cfg)
    opts = EstimationOptions(restarts=cfg.restarts, grouping=HGrouping(cfg.grouping))
    out_dir = Path(args.out_dir or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    panel = loaded.panel
    if args.no_history or panel.n_rows < cfg.window:
        if panel.n_rows < cfg.window and not cfg.allow_short_window:
            raise DataError(f"panel has {panel.n_rows} rows, the window needs {cfg.window}")
        history = []
        final = estimate(panel, init, opts)
        last_date = panel.dates[-1]
    else:
        history = rolling_estimates(panel, init, cfg.window, cfg.step, opts,
                                    min_window=cfg.window if cfg.allow_short_window else 250,
                                    expanding=cfg.expanding)
        final, last_date = history[-1].result, history[-1].date
    doc = final.to_dict()
    doc["as_of"] = last_date
    doc["short_rows"] = list(loaded.short_rows)
    dataio.write_json(out_dir / "estimate.json", doc)
    names = ["date", "row", "loglik", "converged", "lambda" if init.spec.is_afns else "kappaQ"]
    names += [f"sigma{i + 1}" for i in range(init.n)] + [f"kP{i + 1}" for i in range(init.n)]
    names += [f"thetaP{i + 1}" for i in range(init.n)] + [f"x{i + 1}" for i in range(init.n)]
    rows = []
    for h in history:
        p = h.result.params
        rows.append([h.date, h.row, h.result.loglik, h.result.converged,
                     p.lam if p.spec.is_afns else p.kappa_q, *p.sigma_diag, *p.kP_diag,
                     *p.thetaP, *h.result.final_filter.mean])
    dataio.write_csv(out_dir / "param_history.csv", names, rows)
    _Output(args.out).json({"estimate": str(out_dir / "estimate.json"),
                            "history": str(out_dir / "param_history.csv"),
                            "loglik": final.loglik, "converged": final.converged})


def cmd_term_rates(args):
    from .estimation import HGrouping
    from .term_structure import term_curve

    cfg = dataio.load_config(args.config)
    cal = _calendar(args, cfg)
    loaded = _load(cfg, cal)
    params = _params(args, cfg)
    grouping = HGrouping(cfg.grouping)
    _, labels = loaded.panel.groups(grouping)
    states = _filtered_states(params, loaded, _h_sd(args, len(labels), cfg), grouping)
    tenors = [t.strip() for t in args.tenors.split(",") if t.strip()]
    rows = []
    for d, x in zip(loaded.panel.dates, states):
        curve = term_curve(params, x, d, tenors, cal)
        for pt in curve.points:
            tau = (pt.end - pt.start).days / 360.0
            rows.append([d, pt.tenor, pt.start, pt.end, pt.rate, float(np.log1p(pt.rate * tau) / tau)])
    _Output(args.out).csv(["date", "tenor", "start", "end", "rate", "zero_rate"], rows)


def _cme_grid(as_of: date, cal: Calendar) -> list[FuturesContract]:
    from .montecarlo import consecutive_contracts

    return consecutive_contracts(as_of, cal, 13, 39)


def cmd_convexity(args):
    from .term_structure import convexity_report

    params = _params(args)
    cal = _calendar(args)
    x = _state(args, params)
    as_of = date.fromisoformat(args.as_of)
    if args.grid == "cme":
        contracts = _cme_grid(as_of, cal)
    else:
        from .montecarlo import study_contracts

        contracts = study_contracts()
    mc = _mc(args) if params.spec.is_shadow else None
    rep = convexity_report(params, x, contracts, 0.0, as_of, mc)
    _Output(args.out).csv(
        ["contract_id", "kind", "start", "end", "futures_rate", "forward_rate", "adjustment",
         "method", "std_error"],
        [[r.contract_id, r.kind, r.start, r.end, r.futures_rate, r.forward_rate, r.adjustment,
          r.method, r.std_error] for r in rep.rows])


def cmd_validate(args):
    from .montecarlo import approximation_error_report, mc_option_price, shadow_accuracy_report

    out = _Output(args.out)
    if args.what == "approx":
        params = _params(args)
        rep = approximation_error_report(params, _state(args, params),
                                         date.fromisoformat(args.as_of), _calendar(args))
        worst = {k.value: rep.max_error(k) for k in ContractKind}
        ok = all(worst[k.value] < lim for k, lim in APPROX_LIMITS.items())
        out.json({"as_of": rep.as_of, "max_abs_error": worst,
                  "limits": {k.value: v for k, v in APPROX_LIMITS.items()}, "pass": ok,
                  "rows": [dict(asdict(r), error=r.error) for r in rep.rows]})
    elif args.what == "shadow":
        params = _params(args)
        if not params.spec.is_shadow:
            params = replace(params, spec=ModelSpec(Variant.SHADOW_AFNS3))
        states = {"away": params.thetaP.copy(), "near_bound": np.array(SHADOW_NEAR_BOUND)}
        if args.state:
            states = {"custom": _state(args, params)}
        rows = shadow_accuracy_report(params, states, mc=_mc(args))
        worst = max(abs(r.error) for r in rows) * 1e4
        ok = worst <= SHADOW_LIMIT_BP
        out.json({"max_abs_error_bp": worst, "limit_bp": SHADOW_LIMIT_BP, "pass": ok,
                  "states": {k: v.tolist() for k, v in states.items()},
                  "rows": [dict(asdict(r), error_bp=r.error * 1e4) for r in rows]})
    else:
        params = _params(args)
        g = replace(params, spec=ModelSpec(Variant.AFNS3))
        s = replace(params, spec=ModelSpec(Variant.SHADOW_AFNS3))
        x = _state(args, params, OPTION_NEAR_BOUND)
        contract = FuturesContract.stylized("3M", args.expiry, 90, "option-underlying")
        res = mc_option_price(g, s, x, contract, args.expiry, _mc(args))
        ok = res.ratio < OPTION_RATIO_LIMIT
        out.json({"state": x.tolist(), "expiry": args.expiry, "gaussian": asdict(res.gaussian),
                  "shadow": asdict(res.shadow), "ratio": res.ratio,
                  "limit_ratio": OPTION_RATIO_LIMIT, "pass": ok})
    if not ok:
        raise ValidationFailed(args.what)


def cmd_sim_study(args):
    from .montecarlo import SimStudyConfig, sim_study

    truth = _params(args)
    cfg = SimStudyConfig(n_replications=args.reps, n_obs=args.n_obs, seed=args.seed,
                         workers=args.workers, restarts=args.restarts)
    rep = sim_study(truth, cfg)
    doc = {"config": {"reps": cfg.n_replications, "n_obs": cfg.n_obs, "seed": cfg.seed,
                      "tick": cfg.tick, "dt": cfg.dt},
           "truth": truth.to_dict(), "n_ok": rep.n_ok, "n_failed": rep.n_failed,
           "params": [asdict(p) for p in rep.params], "states": [asdict(s) for s in rep.states],
           "replications": [{"index": r.index, "ok": r.ok, "estimates": r.estimates,
                             "state_error": r.state_error,
                             "loglik": r.loglik if r.ok else None, "n_fev": r.n_fev,
                             "message": r.message} for r in rep.replications]}
    _Output(args.out).json(doc)


def cmd_analyze(args):
    out = _Output(args.out)
    if args.what == "rmse":
        from .estimation import HGrouping

        cfg = dataio.load_config(args.config)
        cal = _calendar(args, cfg)
        loaded = _load(cfg, cal)
        params = _params(args, cfg)
        grouping = HGrouping(cfg.grouping)
        _, labels = loaded.panel.groups(grouping)
        states = _filtered_states(params, loaded, _h_sd(args, len(labels), cfg), grouping)
        fit = analysis.fitted_rates(params, loaded.panel, states)
        cols, obs = analysis.slot_matrix(loaded.panel, loaded.panel.rate)
        _, mod = analysis.slot_matrix(loaded.panel, fit)
        rmse = analysis.fit_rmse(obs, mod)
        out.csv(["slot", "n", "rmse_bp"],
                [[c, int(np.isfinite(obs[:, j]).sum()), rmse[j]] for j, c in enumerate(cols)])
    elif args.what == "compare":
        stats = analysis.compare_term_rates(_term_series(args.model), _term_series(args.benchmark))
        names = ["n", "rmse", "mean", "sd", "q05", "q25", "median", "q75", "q95"]
        out.csv(["tenor", *names], [[t, *(getattr(s, n) for n in names)] for t, s in stats.items()])
    elif args.what == "fomc":
        quotes = dataio.read_quotes(args.quotes)
        cal = _calendar(args)
        by_month = _monthly_series(quotes, cal)
        rows = []
        for m in _meeting_dates(args.meetings):
            spot = by_month.get((m.year, m.month), {})
            nxt_first = date(m.year + (m.month == 12), m.month % 12 + 1, 1)
            nxt = by_month.get((nxt_first.year, nxt_first.month))
            rows.append([m, analysis.fomc_surprise(spot, m, nxt) * analysis.BP])
        out.csv(["date", "surprise_bp"], rows)
    else:
        quotes = dataio.read_quotes(args.quotes)
        fixings = dataio.read_fixings(args.fixings)
        cal = _calendar(args)
        futures, realized = _month_end_panel(quotes, fixings, cal)
        horizons = [int(h) for h in args.horizons.split(",")]
        res = analysis.risk_premium(futures, realized, horizons, args.stride)
        names = ["horizon", "n", "alpha", "std_error", "alpha_annualized", "std_error_annualized"]
        out.csv(names, [[getattr(r, n) for n in names] for r in res])


def _term_series(path) -> dict:
    out = {}
    for line, rec in dataio.read_csv(path, ("date", "tenor", "rate")):
        key = (dataio._date(rec["date"], path, line, "date"), rec["tenor"].upper())
        if key in out:
            raise DataError(f"{path}:{line}: duplicate {key[0].isoformat()} {key[1]}", line=line)
        out[key] = dataio._float(rec["rate"], path, line, "rate")
    return out


def _meeting_dates(path) -> list[date]:
    out = []
    for line, rec in dataio.read_csv(path, ("date",)):
        out.append(dataio._date(rec["date"], path, line, "date"))
    return sorted(out)


def _one_month_start(q: dataio.QuoteRow, cal: Calendar) -> date:
    if q.accrual_start is not None:
        return q.accrual_start
    _, year, month = dataio.parse_contract_id(q.contract_id)
    return date(year, month, 1)


def _monthly_series(quotes, cal) -> dict[tuple[int, int], dict[date, float]]:
    """One-month contract rates keyed by (year, month) of the accrual, then trade date."""
    out: dict[tuple[int, int], dict[date, float]] = {}
    for q in quotes:
        if q.kind is ContractKind.ONE_MONTH:
            s = _one_month_start(q, cal)
            out.setdefault((s.year, s.month), {})[q.date] = q.rate
    return out


def _month_end_panel(quotes, fixings, cal):
    """Month-end one-month futures rates and realized monthly averages."""
    from .futures import one_month_contract

    last_day: dict[tuple[int, int], date] = {}
    for q in quotes:
        key = (q.date.year, q.date.month)
        last_day[key] = max(last_day.get(key, q.date), q.date)
    ends = set(last_day.values())
    futures: dict[date, dict[date, float]] = {}
    months = set()
    for q in quotes:
        if q.kind is ContractKind.ONE_MONTH and q.date in ends:
            s = _one_month_start(q, cal)
            futures.setdefault(q.date, {})[date(s.year, s.month, 1)] = q.rate
            months.add(date(s.year, s.month, 1))
    realized = {}
    for m in sorted(months):
        c = one_month_contract(m.year, m.month, cal, m)
        if all(d in fixings for d in c.fixing_dates):
            rates = np.array([fixings[d] for d in c.fixing_dates])
            realized[m] = float(rates @ c.coverage / c.length)
    return futures, realized


# ---------------------------------------------------------------------------
# parser


def _add_mc(p, paths: int, dt: float):
    p.add_argument("--paths", type=int, default=paths, help="Monte Carlo paths")
    p.add_argument("--dt", type=float, default=dt, help="simulation step in years")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scheme", choices=["exact", "euler"], default="exact")
    p.add_argument("--block-size", type=int, default=10_000)


def _add_model(p):
    p.add_argument("--params", help="parameter JSON (default: shipped fixture)")
    p.add_argument("--variant", choices=[v.value for v in Variant],
                   help="switch between AFNS3 and SHADOW_AFNS3")
    p.add_argument("--state", help="comma-separated state vector (default: thetaP)")
    p.add_argument("--calendar", help="holiday file (default: bundled USNY)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sofrcurve", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help="output file (default: stdout)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", parents=[common], help="maximum-likelihood estimation with rolling history")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--no-history", action="store_true", help="single fit on the whole panel")
    p.add_argument("--calendar")
    p.add_argument("--params")
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("term-rates", parents=[common], help="filtered spot-starting term rates per panel date")
    p.add_argument("--config", required=True)
    p.add_argument("--tenors", default="1M,3M,6M,12M")
    p.add_argument("--params")
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--calendar")
    p.add_argument("--h-sd", type=float, default=1e-4,
                   help="measurement error sd when the params file has none")
    p.set_defaults(func=cmd_term_rates)

    p = sub.add_parser("convexity", parents=[common], help="convexity adjustments of a contract grid")
    _add_model(p)
    p.add_argument("--grid", choices=["cme", "study"], default="cme")
    p.add_argument("--as-of", default="2020-12-11")
    _add_mc(p, 100_000, 1.0 / 3600.0)
    p.set_defaults(func=cmd_convexity)

    p = sub.add_parser("validate", parents=[common], help="Monte Carlo and approximation checks")
    p.add_argument("what", choices=["approx", "shadow", "option"])
    _add_model(p)
    p.add_argument("--as-of", default="2021-01-04")
    p.add_argument("--expiry", type=float, default=0.5, help="option expiry in years")
    _add_mc(p, 100_000, 1.0 / 3600.0)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sim-study", parents=[common], help="parameter-recovery simulation study")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-obs", type=int, default=500)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--restarts", type=int, default=0)
    p.add_argument("--params")
    p.set_defaults(func=cmd_sim_study, variant=None)

    p = sub.add_parser("analyze", parents=[common], help="empirical diagnostics")
    p.add_argument("what", choices=["rmse", "compare", "fomc", "risk-premium"])
    p.add_argument("--config", help="run configuration (rmse)")
    p.add_argument("--params")
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--calendar")
    p.add_argument("--h-sd", type=float, default=1e-4)
    p.add_argument("--model", help="model term rates CSV (compare)")
    p.add_argument("--benchmark", help="benchmark term rates CSV (compare)")
    p.add_argument("--quotes", help="quote file (fomc, risk-premium)")
    p.add_argument("--fixings", help="fixing file (risk-premium)")
    p.add_argument("--meetings", help="CSV with a date column (fomc)")
    p.add_argument("--horizons", default="1,2,3,4,5,6")
    p.add_argument("--stride", type=int, default=1)
    p.set_defaults(func=cmd_analyze)
    return ap


_REQUIRED = {"rmse": ("config",), "compare": ("model", "benchmark"), "fomc": ("quotes", "meetings"),
             "risk-premium": ("quotes", "fixings")}


def _error(kind: str, message: str, **extra) -> int:
    doc = {"error": kind, "message": message}
    doc.update({k: v for k, v in extra.items() if v not in (None, [])})
    sys.stderr.write(dataio.dumps(doc) + "\n")
    return 2


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "analyze":
        missing = [f"--{n}" for n in _REQUIRED[args.what] if getattr(args, n) is None]
        if missing:
            return _error("usage", f"analyze {args.what} needs {', '.join(missing)}")
    try:
        args.func(args)
    except ValidationFailed as exc:
        sys.stderr.write(dataio.dumps({"error": "validation", "message": f"{exc} thresholds breached"})
                         + "\n")
        return 1
    except DataError as exc:
        return _error(exc.kind, str(exc), line=exc.line,
                      missing=[getattr(m, "isoformat", lambda m=m: m)() for m in exc.missing])
    except CurveError as exc:
        return _error(exc.kind, str(exc))
    except OSError as exc:
        return _error("io", str(exc))
    except ValueError as exc:
        return _error("value", str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())

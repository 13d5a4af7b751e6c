"""Command-line front end: flat-search, riesz, flow, planar and torus.

Every subcommand reads a JSON config, validates it against a dataclass schema
(unknown keys are rejected by name), writes the fully resolved config to
``<out>/config.resolved.json`` and deterministic artifacts next to it.
Exit codes: 0 success, 1 usage or config error, 2 domain "not found".
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import flowsim, planar, riesz, search
from .construction import ScheduleError, TowerSchedule, chained_params
from .expsum import ExpSum1D
from .flatness import Window, measure_flatness


class ConfigError(ValueError):
    pass


# -- config schemas ----------------------------------------------------------

@dataclass
class WindowConfig:
    a: float
    b: float


@dataclass
class ChainedConfig:
    m1: float
    betas: list
    qs: list


@dataclass
class ScheduleConfig:
    stages: list = None
    chained: ChainedConfig = None
    xis: list = None
    depth: int = None


@dataclass
class FlatSearchConfig:
    window: WindowConfig = field(default_factory=lambda: WindowConfig(0.5, 2.0))
    eps: float = 0.15
    m: float = 0.7
    beta: float = 1.0
    qMin: int = 2
    qMax: int = 1 << 14
    qStride: int = 1
    epsQuadrature: float = 1e-3
    verifyFactor: int = 4


@dataclass
class RieszConfig:
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    windows: list = field(default_factory=lambda: [{"a": 0.1, "b": 4.0}])
    step: float = None
    seed: str = "indicator"
    zeroRadius: float = 0.05


@dataclass
class FlowConfig:
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    level: str = "indicator"
    levelSamples: int = 1024
    n: int = 1
    depth: int = None
    samples: int = 100_000
    ts: list = None
    tCount: int = 20


@dataclass
class PlanarConfig:
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    B: float = 2.0
    count: int = 512
    a0: float = 1.0
    b0: float = 1.0
    seed: str = "indicator"
    override: bool = True


@dataclass
class TorusConfig:
    K: int = 1
    eps: float = 0.1
    tMax: float = 1000.0
    dt: float = 1e-3


def _build(cls, data, path="config"):
    """Instantiate a (nested) config dataclass, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for k in data:
        if k not in fields:
            raise ConfigError(f"{path}: unknown key {k!r}")
    kwargs = {}
    for name, f in fields.items():
        if name not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigError(f"{path}: missing required key {name!r}")
            continue
        v = data[name]
        sub = f.type if isinstance(f.type, type) else _SCHEMAS.get(f.type)
        if sub is not None and dataclasses.is_dataclass(sub) and v is not None:
            v = _build(sub, v, f"{path}.{name}")
        kwargs[name] = v
    return cls(**kwargs)


_SCHEMAS = {
    "WindowConfig": WindowConfig,
    "ChainedConfig": ChainedConfig,
    "ScheduleConfig": ScheduleConfig,
}


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {k: _to_plain(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(_to_plain(obj), indent=2, sort_keys=True) + "\n")


def _schedule(cfg: ScheduleConfig) -> TowerSchedule:
    if (cfg.stages is None) == (cfg.chained is None):
        raise ConfigError("schedule: give exactly one of 'stages' or 'chained'")
    if cfg.stages is not None:
        doc = {"stages": cfg.stages, "xis": cfg.xis or [], "depth": cfg.depth}
        return TowerSchedule.from_json(json.dumps(doc))
    c = cfg.chained
    if not (len(c.betas) == len(c.qs)):
        raise ConfigError("schedule.chained: betas and qs differ in length")
    if not c.qs:
        return TowerSchedule.from_params([], None, cfg.depth)
    params = chained_params(c.m1, c.betas, c.qs)
    return TowerSchedule.from_params(params, cfg.xis, cfg.depth)


# -- commands ------------------------------------------------------------------

def cmd_flat_search(cfg: FlatSearchConfig, out: Path, seed: int) -> int:
    spec = search.SearchSpec(Window(cfg.window.a, cfg.window.b), cfg.eps, cfg.m, cfg.beta,
                             cfg.qMin, cfg.qMax, cfg.qStride)
    scanned = search.scan_flatness(spec, cfg.epsQuadrature)
    try:
        hits = search.find_flat_q(spec, scanned=scanned)
    except search.NoneFound as e:
        best = search.best_q(scanned)
        _dump({"hits": [], "best": {"q": best[0], "report": best[1].to_dict()},
               "message": str(e)}, out / "report.json")
        return 2
    q0, rep0 = hits[0]
    s = search.stage_sum(cfg.m, cfg.beta, q0)
    fine = measure_flatness(s, spec.window, cfg.epsQuadrature,
                            step=rep0.gridStep / cfg.verifyFactor)
    verify = {
        "q": q0,
        "gridStep": fine.gridStep,
        "l1Defect": fine.l1Defect,
        "difference": abs(fine.l1Defect - rep0.l1Defect),
        "withinRefinementError": abs(fine.l1Defect - rep0.l1Defect) <= rep0.refinementError,
    }
    _dump({"hits": [{"q": q, "report": r.to_dict()} for q, r in hits],
           "selected": q0, "verification": verify}, out / "report.json")
    return 0


def cmd_riesz(cfg: RieszConfig, out: Path, seed: int) -> int:
    sched = _schedule(cfg.schedule)
    wins = [_build(WindowConfig, w, f"config.windows[{i}]") for i, w in enumerate(cfg.windows)]
    if not wins:
        raise ConfigError("windows: need at least one window")
    windows = [Window(w.a, w.b) for w in wins]
    wide = Window(min(w.a for w in windows), max(w.b for w in windows))
    h0 = float(sched.heights[0]) if len(sched) else 1.0
    step = cfg.step
    if step is None:
        spreads = [g.positions[-1] for g in sched.geometries] or [1.0]
        step = 1.0 / (4.0 * max(max(spreads), 1.0))
    state = riesz.new_state(wide, step, cfg.seed, h0)
    states = [state]
    for p, g in sched.stages:
        state = riesz.accumulate(state, riesz.stage_multiplier(state, ExpSum1D(g.positions)))
        states.append(state)
    riesz.save_checkpoint(state, out / "density")
    cert = riesz.check_summability(state.stages)
    measure_bound, deviation = riesz.convergence_rate_bound(state.stages, wide, math.inf)
    cauchy = [a.l1_distance(b) for a, b in zip(states, states[1:])]
    atom = riesz.detect_atom(states, cfg.zeroRadius)
    _dump({
        "certificate": cert.to_dict(),
        "measureBound": measure_bound,
        "deviationBound": deviation,
        "cauchyDifferences": cauchy,
        "windowIntegrals": [s.window_integral() for s in states],
        "stages": [dataclasses.asdict(d) for d in state.stages],
    }, out / "certificate.json")
    _dump(atom.to_dict(), out / "atom.json")
    return 0


def cmd_flow(cfg: FlowConfig, out: Path, seed: int) -> int:
    sched = _schedule(cfg.schedule)
    depth = len(sched) if cfg.depth is None else cfg.depth
    if not 0 <= cfg.n <= depth <= len(sched):
        raise ConfigError("need 0 <= n <= depth <= number of stages")
    f = flowsim.LevelFunction.from_profile(sched, cfg.level, 0, cfg.levelSamples)
    hn = float(sched.heights[cfg.n])
    ts = np.asarray(cfg.ts, float) if cfg.ts is not None else \
        np.linspace(0.0, hn / 2, cfg.tCount + 2)[1:-1]
    rn = flowsim.correlation_analytic(f, sched, cfg.n, np.sort(ts)) if len(ts) else np.array([])
    order = np.argsort(ts)
    rn_sorted = np.empty_like(rn)
    rn_sorted[order] = rn
    mc, se, esc = [], [], []
    ss = np.random.SeedSequence(seed)
    for t, child in zip(ts, ss.spawn(len(ts))):
        m, e, k = flowsim.correlation_monte_carlo(f, sched, depth, float(t), cfg.samples,
                                                  child)
        mc.append(m)
        se.append(e)
        esc.append(k)
    flowsim.write_trace(out / "trace_mc.csv", ts, mc, se)
    flowsim.write_trace(out / "trace_analytic.csv", ts, rn_sorted)
    gamma = float(sched.gammas[cfg.n])
    rows = []
    for t, a, m, e, k in zip(ts, rn_sorted, mc, se, esc):
        bound = gamma + abs(t) / hn + 3 * e
        rows.append({"t": float(t), "gap": abs(a - m), "bound": bound,
                     "ok": bool(abs(a - m) <= bound), "escaped": k})
    r0 = flowsim.correlation_analytic(f, sched, cfg.n, [0.0])[0]
    _dump({"R_n(0)": [r0.real, r0.imag], "gamma_n": gamma, "h_n": hn, "checks": rows},
          out / "flow.json")
    return 0


def cmd_planar(cfg: PlanarConfig, out: Path, seed: int) -> int:
    sched = _schedule(cfg.schedule)
    if len(sched) == 0:
        raise ConfigError("planar: schedule has no stages")
    states = planar.run_planar(sched, cfg.B, cfg.count, cfg.a0, cfg.b0, cfg.seed,
                               override=cfg.override)
    final = states[-1]
    planar.render_density(final, out / "density.pgm")
    a, b = planar.default_strip_params(len(sched), cfg.a0, cfg.b0)
    with open(out / "regions.csv", "w") as fh:
        fh.write("region,mass\n")
        if len(final.stageStrips) >= 2:
            for k, v in planar.classify_regions(final).table():
                fh.write(f"{k},{v!r}\n")
    strips = list(final.stageStrips)
    radii = []
    for n in range(len(strips)):
        for m in range(n + 1, len(strips)):
            r = planar.strip_intersection_radius(strips[n], strips[m])
            radii.append({"n": n + 1, "m": m + 1, "radius": r,
                          "bound": planar.radius_bound(strips[n], strips[m])})
    ratios = [planar.axis_strip_mass_ratio(s, a[-1]) for s in states[1:]]
    _dump({"radii": radii, "axisStripMassRatio": ratios}, out / "planar.json")
    return 0


def cmd_torus(cfg: TorusConfig, out: Path, seed: int) -> int:
    probe = search.TorusProbe(cfg.K, cfg.eps, cfg.tMax, cfg.dt)
    t = search.torus_return_time(probe)
    _dump({"returnTime": t, "found": t is not None}, out / "torus.json")
    return 0 if t is not None else 2


COMMANDS = {
    "flat-search": (FlatSearchConfig, cmd_flat_search),
    "riesz": (RieszConfig, cmd_riesz),
    "flow": (FlowConfig, cmd_flow),
    "planar": (PlanarConfig, cmd_planar),
    "torus": (TorusConfig, cmd_torus),
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flatriesz", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON config file")
        s.add_argument("--out", default=".", help="output directory")
        s.add_argument("--threads", type=int, default=None, help="cap on worker threads")
        s.add_argument("--seed", type=int, default=None,
                       help="random seed (u64); defaults to 0 or the seed of a config echo")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    cls, fn = COMMANDS[args.command]
    try:
        try:
            data = json.loads(Path(args.config).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed JSON config: {e}") from e
        seed = 0 if args.seed is None else args.seed
        if isinstance(data, dict) and set(data) == {"command", "seed", "config"}:
            # a config.resolved.json echo from an earlier run
            if data["command"] != args.command:
                raise ConfigError(f"echo is for {data['command']!r}, not {args.command!r}")
            seed = data["seed"] if args.seed is None else args.seed
            data = data["config"]
        if not (isinstance(seed, int) and 0 <= seed < 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        cfg = _build(cls, data)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.threads is not None:
            import numba

            numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
        resolved = {"command": args.command, "seed": seed, "config": _to_plain(cfg)}
        _dump(resolved, out / "config.resolved.json")
        return fn(cfg, out, seed)
    except flowsim.TooManyEscapes as e:
        print(f"error: {e}; raise depth or shrink t", file=sys.stderr)
        return 1
    except (ConfigError, ScheduleError, TypeError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

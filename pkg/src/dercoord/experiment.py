"""Config-driven experiments: case files, random instances, CSV artifacts.

A run is described by one INI-style config (sections [instance], [graph],
[algorithm], [run], [output]); every algorithm parameter must appear
explicitly, there are no hidden defaults for them. Each seed produces
``trace_<seed>.csv`` and the batch produces ``summary.csv``; floats are
rendered with 17 significant digits so values round-trip losslessly and
repeated runs are byte-identical.

Case file format (text)::

    n
    a_i b_i c_i p_lo p_hi load       (one line per agent)
    n m mode                         (graph section, mode undirected|directed)
    i j                              (one line per edge, 0-based)
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .algorithms import ALGORITHMS, run
from .errors import (
    CaseParseError,
    ConfigError,
    DercoordError,
    GeneratorSpecError,
    InvalidInstanceError,
)
from .metrics import RunTrace, convergence_error, fit_rate
from .network import (
    GraphSchedule,
    NominalGraph,
    format_graph,
    load_graph,
    numbered_lines,
    parse_graph_lines,
)
from .oracle import solve_bisection
from .problem import AlgorithmParams, ConstantStep, DiminishingStep, ProblemInstance, QuadraticCost

# Stream tags keep generator draws disjoint from schedule draws (which use
# key = [seed, step]).
_TAG_INSTANCE = (1 << 63) + 1
_TAG_GRAPH = (1 << 63) + 2

_REJECTION_LIMIT = 1000

TRACE_COLUMNS = (
    "k",
    "err_p",
    "consensus_spread",
    "conservation_residual",
    "mass_residual",
    "min_v",
)
SUMMARY_COLUMNS = (
    "seed",
    "fitted_rate",
    "fit_r_squared",
    "final_error",
    "max_conservation_residual",
    "max_mass_residual",
    "max_consensus_spread",
    "min_v",
    "status",
)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _stream(seed: int, tag: int) -> np.random.Generator:
    key = np.array([seed, tag], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class InstanceSpec:
    """Randomization recipe for dispatch instances.

    Quadratic coefficients, loads, and capacity bounds are drawn uniformly
    from the given ranges; infeasible draws are rejected and redrawn.
    """

    n: int
    a_range: tuple[float, float] = (0.5, 2.0)
    b_range: tuple[float, float] = (0.0, 0.0)
    c_range: tuple[float, float] = (0.0, 0.0)
    load_range: tuple[float, float] = (0.2, 1.8)
    lo_range: tuple[float, float] = (0.0, 0.0)
    hi_range: tuple[float, float] = (1.0, 3.0)

    def __post_init__(self):
        if self.n < 1:
            raise GeneratorSpecError("instance spec needs n >= 1")
        if self.a_range[0] <= 0:
            raise GeneratorSpecError("a_range must be strictly positive")
        for name in ("a_range", "b_range", "c_range", "load_range", "lo_range", "hi_range"):
            r = getattr(self, name)
            if r[0] > r[1]:
                raise GeneratorSpecError(f"{name} has lower bound above upper bound")


def _generate_instance(spec: InstanceSpec, seed: int) -> tuple[ProblemInstance, int]:
    gen = _stream(seed, _TAG_INSTANCE)

    def draw(rng: tuple[float, float], size: int) -> np.ndarray:
        lo, hi = rng
        return np.full(size, lo) if lo == hi else gen.uniform(lo, hi, size)

    for attempt in range(1, _REJECTION_LIMIT + 1):
        a = draw(spec.a_range, spec.n)
        b = draw(spec.b_range, spec.n)
        c = draw(spec.c_range, spec.n)
        loads = draw(spec.load_range, spec.n)
        lo = draw(spec.lo_range, spec.n)
        hi = draw(spec.hi_range, spec.n)
        if np.any(lo > hi):
            continue
        total = loads.sum()
        if not (lo.sum() <= total <= hi.sum()):
            continue
        inst = ProblemInstance(loads, lo, hi, QuadraticCost(a, b, c))
        return inst, attempt
    raise GeneratorSpecError(
        f"{_REJECTION_LIMIT} consecutive infeasible draws; widen the spec ranges"
    )


def generate_instance(spec: InstanceSpec, seed: int) -> ProblemInstance:
    """Deterministic feasible instance for (spec, seed)."""
    inst, _ = _generate_instance(spec, seed)
    return inst


@dataclass(frozen=True)
class GraphSpec:
    """Ring-plus-chords topology recipe.

    A ring over all nodes guarantees (strong) connectivity; `extra_edges`
    chords are added between non-adjacent pairs. Directed chords get a
    random orientation and occasionally both arcs.
    """

    n: int
    extra_edges: int = 0
    directed: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise GeneratorSpecError("graph spec needs n >= 1")


def generate_graph(spec: GraphSpec, seed: int) -> NominalGraph:
    gen = _stream(seed, _TAG_GRAPH)
    n = spec.n
    if n == 1:
        return NominalGraph(1, [], spec.directed)
    if spec.directed:
        edges = [(i, (i + 1) % n) for i in range(n)] if n > 2 else [(0, 1), (1, 0)]
    else:
        edges = [(i, (i + 1) % n) for i in range(n)] if n > 2 else [(0, 1)]
    ring = {(min(i, j), max(i, j)) for i, j in edges}
    candidates = [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if (i, j) not in ring
    ]
    count = min(spec.extra_edges, len(candidates))
    if count:
        picks = gen.choice(len(candidates), size=count, replace=False)
        for idx in sorted(int(i) for i in picks):
            i, j = candidates[idx]
            if not spec.directed:
                edges.append((i, j))
                continue
            r = gen.random()
            if r < 0.4:
                edges.append((i, j))
            elif r < 0.8:
                edges.append((j, i))
            else:
                edges.append((i, j))
                edges.append((j, i))
    return NominalGraph(n, edges, spec.directed)


def format_case(inst: ProblemInstance, graph: NominalGraph) -> str:
    if not isinstance(inst.cost, QuadraticCost):
        raise InvalidInstanceError("case files store quadratic costs only")
    lines = [str(inst.n)]
    for i in range(inst.n):
        lines.append(
            " ".join(
                _fmt(v)
                for v in (
                    inst.cost.a[i],
                    inst.cost.b[i],
                    inst.cost.c[i],
                    inst.p_lo[i],
                    inst.p_hi[i],
                    inst.loads[i],
                )
            )
        )
    return "\n".join(lines) + "\n" + format_graph(graph)


def write_case(path, inst: ProblemInstance, graph: NominalGraph) -> None:
    Path(path).write_text(format_case(inst, graph), encoding="utf-8")


def parse_case(text: str) -> tuple[ProblemInstance, NominalGraph]:
    lines = numbered_lines(text)
    if not lines:
        raise CaseParseError(0, "empty case file")
    lineno, head = lines[0]
    try:
        n = int(head)
    except ValueError:
        raise CaseParseError(lineno, f"expected agent count, got {head!r}") from None
    if n < 1:
        raise CaseParseError(lineno, "agent count must be >= 1")
    if len(lines) < 1 + n:
        raise CaseParseError(lines[-1][0], f"expected {n} agent lines, found {len(lines) - 1}")
    cols = np.empty((n, 6))
    for row in range(n):
        lineno, content = lines[1 + row]
        parts = content.split()
        if len(parts) != 6:
            raise CaseParseError(lineno, f"expected 'a b c p_lo p_hi load', got {content!r}")
        try:
            cols[row] = [float(p) for p in parts]
        except ValueError:
            raise CaseParseError(lineno, f"non-numeric field in {content!r}") from None
        if cols[row, 3] > cols[row, 4]:
            raise InvalidInstanceError(
                f"line {lineno}: p_lo={cols[row, 3]:.6g} > p_hi={cols[row, 4]:.6g}"
            )
        if cols[row, 0] <= 0:
            raise InvalidInstanceError(f"line {lineno}: quadratic coefficient a={cols[row, 0]:.6g} must be > 0")
    graph = parse_graph_lines(lines[1 + n :])
    if graph.n != n:
        raise CaseParseError(lines[1 + n][0], f"graph has {graph.n} nodes but case has {n} agents")
    inst = ProblemInstance(
        loads=cols[:, 5],
        p_lo=cols[:, 3],
        p_hi=cols[:, 4],
        cost=QuadraticCost(cols[:, 0], cols[:, 1], cols[:, 2]),
    )
    return inst, graph


def load_case(path) -> tuple[ProblemInstance, NominalGraph]:
    return parse_case(Path(path).read_text(encoding="utf-8"))


@dataclass
class ExperimentConfig:
    """Fully resolved experiment: instance, graph, algorithm, seeds, output."""

    instance: ProblemInstance
    graph: NominalGraph
    algorithm: str
    params: AlgorithmParams
    q: float
    seeds: tuple[int, ...]
    out_dir: Path | None
    oracle_tol: float = 1e-12
    label: str = "experiment"


def _req(section, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing required key '{key}' in [{where}]")
    return section[key]


def _parse_range(text: str, key: str) -> tuple[float, float]:
    parts = text.split()
    if len(parts) != 2:
        raise ConfigError(f"{key} must be 'low high', got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise ConfigError(f"non-numeric bound in {key}={text!r}") from None


def load_config(path, out_override=None, seeds_override=None) -> ExperimentConfig:
    """Parse and fully resolve a config file; all validation happens here."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(path.read_text(encoding="utf-8"))
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for section in ("instance", "algorithm", "run"):
        if section not in cp:
            raise ConfigError(f"missing section [{section}]")

    instance_sec = cp["instance"]
    if "case" in instance_sec:
        case_path = Path(instance_sec["case"])
        if not case_path.is_absolute():
            case_path = path.parent / case_path
        try:
            inst, graph = load_case(case_path)
        except FileNotFoundError:
            raise ConfigError(f"case file not found: {case_path}") from None
    else:
        try:
            n = int(_req(instance_sec, "n", "instance"))
            inst_seed = int(_req(instance_sec, "seed", "instance"))
        except ValueError:
            raise ConfigError("instance n and seed must be integers") from None
        kwargs = {}
        for key in ("a_range", "b_range", "c_range", "load_range", "lo_range", "hi_range"):
            if key in instance_sec:
                kwargs[key] = _parse_range(instance_sec[key], key)
        inst = generate_instance(InstanceSpec(n=n, **kwargs), inst_seed)
        if "graph" not in cp:
            raise ConfigError("generated instances need a [graph] section")
        graph_sec = cp["graph"]
        if "file" in graph_sec:
            graph = load_graph(path.parent / graph_sec["file"])
        else:
            mode = _req(graph_sec, "mode", "graph").lower()
            if mode not in ("undirected", "directed"):
                raise ConfigError(f"graph mode must be undirected|directed, got {mode!r}")
            try:
                extra = int(graph_sec.get("extra_edges", "0"))
                graph_seed = int(graph_sec.get("seed", str(inst_seed)))
            except ValueError:
                raise ConfigError("graph extra_edges and seed must be integers") from None
            graph = generate_graph(
                GraphSpec(n=inst.n, extra_edges=extra, directed=(mode == "directed")),
                graph_seed,
            )

    alg_sec = cp["algorithm"]
    algorithm = _req(alg_sec, "id", "algorithm").lower()
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm id {algorithm!r}; expected one of {ALGORITHMS}")
    try:
        if "s" in alg_sec:
            if "step_a" in alg_sec or "step_b" in alg_sec:
                raise ConfigError("give either s or step_a/step_b, not both")
            step = ConstantStep(float(alg_sec["s"]))
        elif "step_a" in alg_sec and "step_b" in alg_sec:
            step = DiminishingStep(float(alg_sec["step_a"]), float(alg_sec["step_b"]))
        else:
            raise ConfigError("missing stepsize: give s or step_a and step_b in [algorithm]")
        xi = float(_req(alg_sec, "xi", "algorithm"))
        nhat = float(_req(alg_sec, "nhat", "algorithm"))
        if algorithm in ("robust", "virtual"):
            gamma = float(_req(alg_sec, "gamma", "algorithm"))
        else:
            gamma = float(alg_sec.get("gamma", "0.9"))
    except ValueError:
        raise ConfigError("non-numeric algorithm parameter") from None

    run_sec = cp["run"]
    try:
        K = int(_req(run_sec, "K", "run"))
        q = float(_req(run_sec, "q", "run"))
        oracle_tol = float(run_sec.get("oracle_tol", "1e-12"))
    except ValueError:
        raise ConfigError("non-numeric run parameter") from None
    seeds_text = seeds_override if seeds_override is not None else _req(run_sec, "seeds", "run")
    try:
        seeds = tuple(int(s) for s in str(seeds_text).replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"seeds must be integers, got {seeds_text!r}") from None
    if not seeds:
        raise ConfigError("empty seed list")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("duplicate seeds")
    if not (0.0 <= q < 1.0):
        raise ConfigError(f"q={q} outside [0, 1)")
    if K < 0:
        raise ConfigError("K must be nonnegative")

    out_dir = out_override
    if out_dir is None and "output" in cp and "dir" in cp["output"]:
        out_dir = path.parent / cp["output"]["dir"]
    try:
        params = AlgorithmParams(step=step, xi=xi, nhat=nhat, gamma=gamma, horizon=K)
    except InvalidInstanceError as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(
        instance=inst,
        graph=graph,
        algorithm=algorithm,
        params=params,
        q=q,
        seeds=seeds,
        out_dir=None if out_dir is None else Path(out_dir),
        oracle_tol=oracle_tol,
        label=path.stem,
    )


@dataclass
class SeedOutcome:
    seed: int
    status: str
    trace: RunTrace | None = None
    error: np.ndarray | None = None
    fitted_rate: float = float("nan")
    fit_r_squared: float = float("nan")
    message: str = ""


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    outcomes: list[SeedOutcome] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(o.status == "ok" for o in self.outcomes)


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    os.replace(tmp, path)


def _trace_csv(trace: RunTrace, error: np.ndarray) -> str:
    res = trace.residuals
    rows = [",".join(TRACE_COLUMNS)]
    nan = np.full(trace.p.shape[0], np.nan)
    spread = res.get("consensus_spread", nan)
    conservation = res.get("conservation", nan)
    mass = res.get("mass", nan)
    min_v = res.get("min_v", nan)
    for k in range(trace.p.shape[0]):
        rows.append(
            ",".join(
                (
                    str(k),
                    _fmt(error[k]),
                    _fmt(spread[k]),
                    _fmt(conservation[k]),
                    _fmt(mass[k]),
                    _fmt(min_v[k]),
                )
            )
        )
    return "\n".join(rows) + "\n"


def _summary_row(outcome: SeedOutcome) -> str:
    t = outcome.trace
    res = t.residuals if t is not None else {}

    def series_max(key):
        return float(res[key].max()) if key in res else float("nan")

    final_error = float(outcome.error[-1]) if outcome.error is not None else float("nan")
    min_v = float(res["min_v"].min()) if "min_v" in res else float("nan")
    cells = (
        str(outcome.seed),
        _fmt(outcome.fitted_rate),
        _fmt(outcome.fit_r_squared),
        _fmt(final_error),
        _fmt(series_max("conservation")),
        _fmt(series_max("mass")),
        _fmt(series_max("consensus_spread")),
        _fmt(min_v),
        outcome.status,
    )
    return ",".join(cells)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run every seed, write per-seed trace CSVs plus summary.csv.

    Per-seed failures are recorded and remaining seeds still run; the
    result's `ok` flag is False if any seed errored. Output files are
    written atomically and are byte-identical across repeated runs of the
    same config.
    """
    if config.out_dir is None:
        raise ConfigError("no output directory: set [output] dir or pass --out")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    solution = solve_bisection(
        config.instance, xi=config.params.xi, nhat=config.params.nhat, tol=config.oracle_tol
    )
    result = ExperimentResult(config=config)
    for seed in config.seeds:
        outcome = SeedOutcome(seed=seed, status="ok")
        try:
            schedule = GraphSchedule(config.graph, config.q, seed, config.params.horizon)
            trace = run(config.algorithm, config.instance, schedule, config.params)
            err = convergence_error(trace, solution)
            outcome.trace = trace
            outcome.error = err
            try:
                fit = fit_rate(err)
                outcome.fitted_rate = fit.rate
                outcome.fit_r_squared = fit.r_squared
            except DercoordError:
                pass  # converged-to-floor or too-short series: rate stays nan
            _write_atomic(out / f"trace_{seed}.csv", _trace_csv(trace, err))
        except DercoordError as exc:
            outcome.status = "error"
            outcome.message = str(exc)
        result.outcomes.append(outcome)
    header = ",".join(SUMMARY_COLUMNS)
    body = "\n".join(_summary_row(o) for o in result.outcomes)
    _write_atomic(out / "summary.csv", header + "\n" + body + "\n")
    return result


__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "GraphSpec",
    "InstanceSpec",
    "SeedOutcome",
    "format_case",
    "generate_graph",
    "generate_instance",
    "load_case",
    "load_config",
    "parse_case",
    "run_experiment",
    "write_case",
]

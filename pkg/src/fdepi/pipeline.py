"""End-to-end analysis: configuration, shared state and the individual steps.

Every step reads what it needs from a :class:`Context`, which computes
intermediate results lazily and caches them, and writes its artifacts through
an :class:`ArtifactWriter` (temp file + rename).  Each step is a pure function
of the configuration, so any subcommand reproduces the files the full
pipeline writes for it.
"""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import hashlib
import io
import os
import re
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from . import depth, featselect, fdcore, funreg, ingest, iwt, motifs, plotting, scalar
from .fdcore import FunctionalDataset, format_float

__all__ = ["Config", "ConfigError", "Context", "ArtifactWriter", "STEPS", "default_data_dir",
           "parse_config_file"]

DATASETS = ("DPC", "ISTAT", "MAX")
INPUT_FILES = {"dpc": "dpc.csv", "istat": "istat.csv", "mobility": "mobility.csv",
               "population": "population.csv", "covariates": "covariates.csv"}


class ConfigError(ValueError):
    """Invalid or missing configuration field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"config field {field_name!r}: {message}")
        self.field = field_name


def default_data_dir() -> Path:
    """``FDEPI_FIXTURE_DIR`` if set, else the bundled fixtures."""
    env = os.environ.get("FDEPI_FIXTURE_DIR")
    if env:
        return Path(env)
    return Path(str(resources.files("fdepi") / "data"))


@dataclass(frozen=True)
class Config:
    """Pipeline settings.  ``seed`` has no default: runs are never clock-seeded."""

    seed: int
    out: Path = Path("fdepi_out")
    data_dir: Path | None = None
    dpc: Path | None = None
    istat: Path | None = None
    mobility: Path | None = None
    population: Path | None = None
    covariates: Path | None = None
    dataset: str = "MAX"
    k: int = 2
    length: int = 65
    restarts: int = 20
    derivative: bool = False
    permutations: int = 1000
    smooth_lambdas: tuple | None = None
    reg_basis: int = 15
    delta: float = 0.1
    max_biclusters: int = 2
    cc_alpha: float = 1.2
    alpha: float = 0.5
    variance_target: float = 0.95
    n_lambda: int = 100
    top_k: int = 5
    threads: int = 1

    def __post_init__(self):
        base = Path(self.data_dir) if self.data_dir is not None else default_data_dir()
        object.__setattr__(self, "data_dir", base)
        for key, fname in INPUT_FILES.items():
            val = getattr(self, key)
            object.__setattr__(self, key, Path(val) if val is not None else base / fname)
        object.__setattr__(self, "out", Path(self.out))
        self.validate()

    def validate(self) -> None:
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ConfigError("seed", f"must be a non-negative integer, got {self.seed!r}")
        if self.dataset not in DATASETS:
            raise ConfigError("dataset", f"must be one of {DATASETS}, got {self.dataset!r}")
        positive = {"k": 1, "length": 2, "restarts": 1, "permutations": 100, "reg_basis": 4,
                    "max_biclusters": 1, "n_lambda": 2, "top_k": 1, "threads": 1}
        for key, lo in positive.items():
            if getattr(self, key) < lo:
                raise ConfigError(key, f"must be >= {lo}, got {getattr(self, key)}")
        if not self.delta > 0:
            raise ConfigError("delta", f"must be > 0, got {self.delta}")
        if not self.cc_alpha >= 1:
            raise ConfigError("cc_alpha", f"must be >= 1, got {self.cc_alpha}")
        if not 0 < self.alpha <= 1:
            raise ConfigError("alpha", f"must lie in (0, 1], got {self.alpha}")
        if not 0 < self.variance_target <= 1:
            raise ConfigError("variance_target", f"must lie in (0, 1], got {self.variance_target}")
        if self.smooth_lambdas is not None and (
                len(self.smooth_lambdas) == 0 or any(not (v >= 0) for v in self.smooth_lambdas)):
            raise ConfigError("smooth_lambdas", "must be a non-empty list of values >= 0")

    def check_inputs(self) -> None:
        for key in INPUT_FILES:
            path = getattr(self, key)
            if not Path(path).is_file():
                raise ConfigError(key, f"input file not found: {path}")

    def canonical(self) -> str:
        """``key = value`` lines of every setting that can change an output."""
        lines = []
        for f in dataclasses.fields(self):
            if f.name in ("out", "threads"):
                continue
            val = getattr(self, f.name)
            if isinstance(val, tuple):
                val = ",".join(format_float(v) for v in val)
            elif isinstance(val, float):
                val = format_float(val)
            lines.append(f"{f.name} = {val}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(Config)}


def coerce(key: str, raw) -> object:
    """Convert a textual value to the type of config field ``key``."""
    if key not in _FIELD_TYPES:
        raise ConfigError(key, "unknown setting")
    kind = _FIELD_TYPES[key]
    text = str(raw).strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "tuple | None":
            return tuple(float(v) for v in text.split(",") if v.strip())
        if kind in ("Path", "Path | None"):
            return Path(text)
        return text
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r} as {kind}") from None


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        out[key] = coerce(key, val)
    return out


class ArtifactWriter:
    """Writes files into ``root`` atomically and remembers what was written."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.written: list[str] = []

    def write_bytes(self, name: str, data: bytes) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, self.root / name)
        except BaseException:
            with contextlib.suppress(FileNotFoundError):
                os.unlink(tmp)
            raise
        self.written.append(name)

    @contextlib.contextmanager
    def text(self, name: str):
        buf = io.StringIO()
        yield buf
        self.write_bytes(name, buf.getvalue().encode("utf-8"))

    __call__ = text


def slug(name: str) -> str:
    """File-name friendly form of a covariate name."""
    s = name.replace("%", "pct ").replace("/", " per ")
    return re.sub(r"[^a-z0-9]+", "_", s.lower()).strip("_")


class Context:
    """Lazily computed intermediate results for one configuration."""

    def __init__(self, config: Config):
        self.config = config
        self.n_jobs = config.threads

    # inputs
    @cached_property
    def population(self) -> dict:
        return ingest.read_population(self.config.population)

    @cached_property
    def dpc_raw(self):
        return ingest.read_dpc(self.config.dpc)

    @cached_property
    def raw(self) -> dict:
        pop = self.population
        dpc = ingest.build_dpc_mortality(self.dpc_raw, pop["population"])
        ist = ingest.build_istat_differential(ingest.read_istat(self.config.istat), pop["population_covered"])
        return {
            "DPC": dpc,
            "ISTAT": ist,
            "MAX": ingest.build_max_mortality(dpc, ist),
            "positivity": ingest.build_positivity(self.dpc_raw),
            "mobility": ingest.build_mobility(ingest.read_mobility(self.config.mobility)),
        }

    @cached_property
    def covariates(self) -> ingest.CovariateTable:
        return ingest.build_covariates(ingest.read_covariates(self.config.covariates))

    # smoothing
    @cached_property
    def smoothed(self) -> dict:
        lams = self.config.smooth_lambdas
        return {name: fdcore.select_lambda(ds, lams)[1] for name, ds in self.raw.items()}

    def curves(self, name: str) -> FunctionalDataset:
        return self.smoothed[name].to_dataset()

    # motifs and alignment
    def motif_model(self, dataset: str | None = None) -> motifs.MotifModel:
        dataset = dataset or self.config.dataset
        cache = self.__dict__.setdefault("_models", {})
        if dataset not in cache:
            c = self.config
            model = motifs.prob_kma(self.curves(dataset), K=c.k, c=c.length, restarts=c.restarts,
                                    seed=c.seed, use_derivative=c.derivative, n_jobs=self.n_jobs)
            # canonical cluster numbering: highest motif level first
            cache[dataset] = model.relabeled(np.argsort(-model.motifs.mean(axis=1), kind="stable"))
        return cache[dataset]

    @property
    def model(self) -> motifs.MotifModel:
        return self.motif_model()

    def aligned_for(self, dataset: str) -> dict:
        cache = self.__dict__.setdefault("_aligned", {})
        if dataset not in cache:
            m = self.motif_model(dataset)
            cache[dataset] = {
                "mortality": motifs.apply_shifts(m, self.curves(dataset)),
                "mobility": motifs.apply_shifts(m, self.curves("mobility")),
                "positivity": motifs.apply_shifts(m, self.curves("positivity")),
            }
        return cache[dataset]

    @property
    def aligned(self) -> dict:
        return self.aligned_for(self.config.dataset)

    @property
    def groups(self) -> np.ndarray:
        return self.model.hard_labels

    # group test and depth
    @cached_property
    def iwt_result(self) -> iwt.IntervalTestResult:
        if self.config.k < 2:
            raise ConfigError("k", "the interval-wise test needs at least 2 groups")
        Y = self.aligned["mortality"].values
        return iwt.iwt(Y[self.groups == 0], Y[self.groups == 1], B=self.config.permutations,
                       seed=self.config.seed, n_jobs=self.n_jobs)

    def depth_report(self, dataset: str | None = None) -> depth.DepthReport:
        data = self.aligned_for(dataset or self.config.dataset)["mortality"]
        return depth.signed_ranking(data, depth.functional_boxplot(data))

    # covariates
    @cached_property
    def z_covariates(self) -> np.ndarray:
        cov = self.covariates
        return scalar.standardize(cov.values, cov.columns)

    @cached_property
    def biclusters(self) -> list:
        c, cov = self.config, self.covariates
        return scalar.cheng_church(self.z_covariates, c.delta, c.max_biclusters, c.cc_alpha,
                                   row_labels=cov.regions, col_labels=cov.columns, seed=c.seed)

    def fpc(self, dataset: str | None = None) -> featselect.FpcExpansion:
        return featselect.fpc(self.aligned_for(dataset or self.config.dataset)["mortality"],
                              self.config.variance_target)

    def selection(self, dataset: str | None = None) -> featselect.SelectionPath:
        dataset = dataset or self.config.dataset
        cache = self.__dict__.setdefault("_selection", {})
        if dataset not in cache:
            cov, c = self.covariates, self.config
            response = self.aligned_for(dataset)["mortality"].reorder(cov.regions)
            X = featselect.standardize_design(cov.values)
            scores = featselect.fpc(response, c.variance_target).scores
            cache[dataset] = featselect.select(scores, X, cov.columns, alpha=c.alpha, n_lambda=c.n_lambda)
        return cache[dataset]

    @cached_property
    def top_covariates(self) -> list:
        """Top covariates of the selection path, in canonical column order."""
        top = set(self.selection().top(self.config.top_k))
        return [c for c in self.covariates.columns if c in top]

    @cached_property
    def pca(self) -> scalar.PCAResult:
        cols = self.top_covariates
        if len(cols) < 2:
            raise ConfigError("top_k", f"PCA needs at least 2 selected covariates, got {cols}")
        cov = self.covariates
        return scalar.pca(np.column_stack([cov.column(c) for c in cols]), cols)

    @cached_property
    def pc1(self) -> np.ndarray:
        """pc1 scores ordered like the aligned curves."""
        regions = self.covariates.regions
        scores = dict(zip(regions, self.pca.scores[:, 0]))
        return np.array([scores[r] for r in self.aligned["mortality"].names])

    def covariate_vector(self, name: str) -> np.ndarray:
        cov = self.covariates
        by_region = dict(zip(cov.regions, cov.column(name)))
        return np.array([by_region[r] for r in self.aligned["mortality"].names])

    # regression
    def ff_spec(self, terms) -> funreg.FunRegSpec:
        al = self.aligned
        fp = {"mob": al["mobility"], "pos": al["positivity"]}
        return funreg.FunRegSpec(
            al["mortality"],
            functional_predictors={t: fp[t] for t in terms if t in fp},
            scalar_covariates={"pc1": self.pc1} if "pc1" in terms else {},
            n_basis=min(self.config.reg_basis, al["mortality"].T),
        )


# steps: each takes (ctx, writer)

def _write_dataset(out, name, data):
    with out(name) as fh:
        fdcore.write_curves_csv(data, fh)


def step_ingest(ctx: Context, out: ArtifactWriter) -> None:
    names = {"DPC": "raw_dpc.csv", "ISTAT": "raw_istat.csv", "MAX": "raw_max.csv",
             "positivity": "raw_positivity.csv", "mobility": "raw_mobility.csv"}
    for key, fname in names.items():
        _write_dataset(out, fname, ctx.raw[key])
    cov = ctx.covariates
    with out("covariates.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region"] + list(cov.columns))
        for region, row in zip(cov.regions, cov.values):
            w.writerow([region] + [format_float(v) for v in row])
    with out("imputation_log.txt") as fh:
        for line in cov.imputation_log:
            fh.write(line + "\n")


def step_smooth(ctx: Context, out: ArtifactWriter) -> None:
    with out("smoothing.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "lambda", "df", "gcv"])
        for name, model in ctx.smoothed.items():
            w.writerow([name, format_float(model.lam), format_float(model.df), format_float(model.gcv_mean)])
    for name in ctx.smoothed:
        _write_dataset(out, f"smoothed_{name.lower()}.csv", ctx.curves(name))
    for name in DATASETS:
        out.write_bytes(f"smoothed_{name.lower()}.svg",
                        plotting.plot_curves(ctx.curves(name), f"{name} mortality (smoothed)",
                                             "deaths per 100,000 per day"))


def step_motifs(ctx: Context, out: ArtifactWriter) -> None:
    ctx.model.write_csvs(out.text)
    out.write_bytes("motifs.svg", plotting.plot_motifs(ctx.curves(ctx.config.dataset), ctx.model))


def step_align(ctx: Context, out: ArtifactWriter) -> None:
    for key, data in ctx.aligned.items():
        _write_dataset(out, f"aligned_{key}.csv", data)


def step_iwt(ctx: Context, out: ArtifactWriter) -> None:
    res = ctx.iwt_result
    with out("iwt_adjusted.csv") as fh:
        res.write_csv(fh)
    Y = ctx.aligned["mortality"].values
    out.write_bytes("iwt.svg", plotting.plot_iwt(res, Y[ctx.groups == 0], Y[ctx.groups == 1]))


def step_depth(ctx: Context, out: ArtifactWriter) -> None:
    report = ctx.depth_report()
    with out("depth_ranking.csv") as fh:
        report.write_csv(fh)
    out.write_bytes("boxplot.svg", plotting.plot_boxplot(ctx.aligned["mortality"], report))


_FF_MODELS = (("mob",), ("pos",), ("mob", "pos"), ("mob", "pos", "pc1"))


def _integrated_residuals(result: funreg.FunRegFit) -> np.ndarray:
    return result.residuals @ fdcore.trapezoid_weights(result.residuals.shape[1])


def step_regress_ff(ctx: Context, out: ArtifactWriter) -> None:
    rows, resid, fits = [], [], {}
    for terms in _FF_MODELS:
        label = "+".join(terms)
        spec = ctx.ff_spec(terms)
        result = funreg.fit(spec)
        m = funreg.metrics(spec, n_jobs=ctx.n_jobs, result=result)
        fits[label] = result
        for term in terms:
            rows.append([label, term, format_float(m.r2), format_float(m.loocv_r2),
                         format_float(m.partial_r2[term])])
        for name, v in zip(spec.response.names, _integrated_residuals(result)):
            resid.append([label, name, format_float(v)])
    with out("fit_metrics.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "term", "r2", "loocv_r2", "partial_r2"])
        w.writerows(rows)
    with out("residuals.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "region", "integrated_residual"])
        w.writerows(resid)
    main, full = fits["mob+pos"], fits["mob+pos+pc1"]
    for term in ("mob", "pos"):
        with out(f"beta_surface_{term}.csv") as fh:
            main.write_surface_csv(term, fh)
        out.write_bytes(f"beta_surface_{term}.svg", plotting.plot_surface(main.surfaces[term], term))
        with out(f"beta_surface_{term}_pc1model.csv") as fh:
            full.write_surface_csv(term, fh)
    with out("beta_curve_pc1.csv") as fh:
        full.write_curve_csv("pc1", fh)
    sign = funreg.effect_sign_bands(full, "pc1")
    out.write_bytes("beta_curve_pc1.svg",
                    plotting.plot_effect_curve(full.curves["pc1"], full.curve_se["pc1"], sign, "pc1"))
    names = ctx.aligned["mortality"].names
    out.write_bytes("residuals.svg", plotting.plot_residuals(names, _integrated_residuals(main), ctx.groups))


def step_regress_fs(ctx: Context, out: ArtifactWriter) -> None:
    response = ctx.aligned["mortality"]
    n_basis = min(ctx.config.reg_basis, response.T)
    summary = []
    for name in ctx.covariates.columns:
        x = ctx.covariate_vector(name)
        for mode, suffix in (("single", ""), ("per-group", "_2int")):
            spec = funreg.FunRegSpec(response, scalar_covariates={name: x}, intercept_mode=mode,
                                     groups=ctx.groups if mode == "per-group" else None, n_basis=n_basis)
            result = funreg.fit(spec)
            sign = funreg.effect_sign_bands(result, name)
            fname = f"beta_curve_{slug(name)}{suffix}"
            with out(fname + ".csv") as fh:
                result.write_curve_csv(name, fh)
            out.write_bytes(fname + ".svg", plotting.plot_effect_curve(
                result.curves[name], result.curve_se[name], sign, f"{name} ({mode} intercept)"))
            summary.append([name, mode, int(np.sum(sign > 0)), int(np.sum(sign < 0)),
                            int(np.sum(sign == 0)), format_float(result.r2)])
    with out("effect_signs.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["covariate", "intercept", "days_positive", "days_negative", "days_nonsignificant", "r2"])
        w.writerows(summary)


def step_hclust(ctx: Context, out: ArtifactWriter) -> None:
    cov = ctx.covariates
    cols = scalar.hcluster(cov.values, cov.columns, axis="columns")
    rows = scalar.hcluster(cov.values, cov.regions, axis="rows", row_labels=cov.regions)
    with out("dendrogram_columns.csv") as fh:
        cols.write_csv(fh)
    with out("dendrogram_rows.csv") as fh:
        rows.write_csv(fh)
    out.write_bytes("heatmap.svg", plotting.plot_heatmap(ctx.z_covariates, cov.regions, cov.columns,
                                                         rows, cols, ctx.biclusters))


def step_bicluster(ctx: Context, out: ArtifactWriter) -> None:
    with out("biclusters.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bicluster", "n_rows", "n_cols", "h_score", "adjusted_h_score", "rows", "cols"])
        for i, b in enumerate(ctx.biclusters, 1):
            w.writerow([i, len(b.rows), len(b.cols), format_float(b.h_score),
                        format_float(b.adjusted_h_score), ";".join(b.rows), ";".join(b.cols)])


def step_vif(ctx: Context, out: ArtifactWriter) -> None:
    cov = ctx.covariates
    values = scalar.vif(cov.values)
    with out("vif.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["covariate", "abbreviation", "vif"])
        for name, v in zip(cov.columns, values):
            w.writerow([name, ingest.COVARIATE_ABBREV.get(name, name), "inf" if np.isinf(v) else format_float(v)])


def step_select(ctx: Context, out: ArtifactWriter) -> None:
    fpc = ctx.fpc()
    with out("fpc.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["component", "eigenvalue", "cumulative_variance", "retained"])
        ve = fpc.variance_explained
        for k in range(min(fpc.eigenvalues.size, 20)):
            w.writerow([k + 1, format_float(fpc.eigenvalues[k]), format_float(ve[k]), int(k < fpc.n_components)])
    path = ctx.selection()
    with out("selection_path.csv") as fh:
        path.write_path_csv(fh)
    with out("top_features.csv") as fh:
        path.write_top_csv(fh, ctx.config.top_k)
    out.write_bytes("selection_path.svg", plotting.plot_selection_path(path))


def step_pca(ctx: Context, out: ArtifactWriter) -> None:
    res = ctx.pca
    with out("pca.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["component", "explained_variance", "explained_variance_ratio"] + list(res.columns))
        for k in range(len(res.columns)):
            w.writerow([k + 1, format_float(res.explained_variance[k]),
                        format_float(res.explained_variance_ratio[k])]
                       + [format_float(v) for v in res.loadings[:, k]])
    with out("pca_scores.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region"] + [f"pc{k + 1}" for k in range(len(res.columns))])
        for region, row in zip(ctx.covariates.regions, res.scores):
            w.writerow([region] + [format_float(v) for v in row])
    out.write_bytes("pca.svg", plotting.plot_pca(res))


# name -> (function, module.operation label for error reports); pipeline order
STEPS = {
    "ingest": (step_ingest, "ingest.build"),
    "smooth": (step_smooth, "fd-core.select_lambda"),
    "motifs": (step_motifs, "motif-cluster.prob_kma"),
    "align": (step_align, "motif-cluster.apply_shifts"),
    "iwt": (step_iwt, "interval-test.iwt"),
    "depth": (step_depth, "depth-rank.signed_ranking"),
    "hclust": (step_hclust, "scalar-analytics.hcluster"),
    "bicluster": (step_bicluster, "scalar-analytics.cheng_church"),
    "vif": (step_vif, "scalar-analytics.vif"),
    "select": (step_select, "feat-select.select"),
    "pca": (step_pca, "scalar-analytics.pca"),
    "regress-ff": (step_regress_ff, "fun-reg.fit"),
    "regress-fs": (step_regress_fs, "fun-reg.fit"),
}

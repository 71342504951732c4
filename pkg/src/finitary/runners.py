"""Model dispatch for the command line: config blocks to sample records and analyses."""

from __future__ import annotations

import numpy as np

from . import chains, fields
from .cftp import PcaSpec, Status, Strategy, UnresolvedError, sample_region, sample_stationary
from .concentration import (
    KappaSource, PatternEvent, ThresholdEvent, admissible_triples, blowup_check, factorization_test,
    kappa_from_moments, radius_moments, verify_gcb,
)
from .config import ExperimentConfig, LATTICE_MODELS
from .lattice import Box, block_spin_mean, block_spin_sum, block_value_sum, indicator, single_spin
from .noise import NoiseSource
from .parallel import map_ordered
from .records import SampleRecord, SampleTable
from .stats import mean_ci

COALESCED = Status.COALESCED.value
UNRESOLVED = Status.UNRESOLVED.value


def build_pca(model) -> PcaSpec:
    name = model.name
    if name == "pure_noise":
        return fields.pure_noise_pca(model.d, model.weights)
    if name == "constant":
        return fields.constant_pca(model.d, model.b0, model.n_states)
    if name == "noisy_majority":
        return fields.noisy_majority_pca(model.d, model.resample)
    if name == "noisy_copy":
        return fields.noisy_copy_pca(model.resample)
    if name == "chain_pca":
        return fields.chain_pca(np.asarray(model.P, dtype=float))
    if name == "ising":
        return fields.ising_heatbath_pca(fields.IsingSpec(model.d, model.beta))
    raise ValueError(f"model {name!r} is not a PCA")


def model_dim(model) -> int:
    return getattr(model, "d", 1) if model.name in LATTICE_MODELS else 1


def _chunks(n: int, size: int) -> list[np.ndarray]:
    return [np.arange(a, min(n, a + size), dtype=np.int64) for a in range(0, n, size)]


def simulate_records(cfg: ExperimentConfig, threads: int = 1) -> list[SampleRecord]:
    """All sample records for the configured model, replica-major, sites sorted.

    Raises UnresolvedError (with the first offending replica) under the
    abort policy.
    """
    model, smp = cfg.model, cfg.sampler
    if model is None:
        raise ValueError("config has no [model] section")
    name, seed = model.name, smp.seed
    noise = NoiseSource(seed)
    d = model_dim(model)
    region = Box.around_origin(d, smp.region_radius)
    chunks = _chunks(smp.replicas, smp.chunk)

    def rec(replica, site, value, tau, radius, ok=True):
        return SampleRecord(name, seed, int(replica), tuple(int(c) for c in site),
                            None if not ok else int(value), int(tau), int(radius),
                            COALESCED if ok else UNRESOLVED)

    if name == "ising":
        spec = fields.IsingSpec(model.d, model.beta)

        def run(chunk):
            out = []
            for r in chunk:
                spins, tau, done = fields.ising_sample_block(spec, region, seed, int(r), smp.t_max, model.margin_floor)
                for s, sp, ta, ok in zip(region.sites(), spins.reshape(-1), tau.reshape(-1), done.reshape(-1)):
                    out.append(rec(r, s, int(sp > 0), ta, ta, bool(ok)))
            return out

    elif name in LATTICE_MODELS - {"parking"}:
        pca = build_pca(model)
        strategy = Strategy(smp.strategy)

        def run(chunk):
            out = []
            if strategy is Strategy.MONOTONE:
                vals, tau, done = sample_region(pca, region, seed, chunk, smp.t_max)
                for k, r in enumerate(chunk):
                    for s in region.sites():
                        idx = (k,) + region.index_of(s)
                        ta = int(tau[idx])
                        out.append(rec(r, s, vals[idx], ta, ta * pca.reach, bool(done[idx])))
            else:
                samples = sample_stationary(pca, list(region.sites()), strategy, noise, smp.t_max,
                                            streams=chunk.tolist(), policy="flag", budget=smp.budget)
                for cs in samples:
                    ok = cs.status is Status.COALESCED
                    out.append(rec(cs.replica, cs.site, cs.value if ok else 0, cs.tau, cs.radius, ok))
            return out

    elif name == "parking":
        spec = fields.ParkingSpec(model.d)
        domain = None if model.domain_radius is None else Box.around_origin(model.d, model.domain_radius)

        def run(chunk):
            out = []
            for r in chunk:
                res = fields.ParkingResolver(fields._priority_fn(noise, int(r), domain))
                for s in region.sites():
                    cs = fields.parking_occupation(spec, s, noise, int(r), domain, res)
                    out.append(rec(r, s, cs.value, cs.tau, cs.radius))
            return out

    elif name == "toboggan":
        tspec = chains.TobogganSpec(tuple(model.p)) if model.p is not None else chains.TobogganSpec.geometric(model.n_support)
        R = smp.region_radius

        def run(chunk):
            out = []
            for r in chunk:
                if tspec.is_geometric():
                    X, th = chains.toboggan_window(2 * R + 1, noise, int(r), start=-R)
                    pairs = zip(range(-R, R + 1), X, th)
                else:
                    pairs = ((i, *chains.toboggan_coding(tspec, i, noise, int(r))) for i in range(-R, R + 1))
                for i, x, t in pairs:
                    out.append(rec(r, (i,), x, t, t))
            return out

    elif name == "multigamma":
        cspec = chains.ChainSpec(np.asarray(model.P, dtype=float), chains.Doeblin(model.m, model.beta, tuple(model.nu)))

        def run(chunk):
            st, th = chains.multigamma_cftp(cspec, noise, chunk)
            return [rec(r, (0,), s, t, t) for r, s, t in zip(chunk, st, th)]

    elif name == "renewal":
        rspec = chains.RenewalSpec.truncated(model.f)
        L = model.window

        def run(chunk):
            out = []
            for r in chunk:
                w, theta = chains.renewal_cftp(rspec, noise, int(r), start=-(L - 1), end=0)
                g = -theta
                for j, y in enumerate(w):
                    t = -(L - 1) + j
                    out.append(rec(r, (t,), y, theta, t - g))
            return out

    elif name == "scum":
        if model.kernel == "iid":
            sspec = chains.scum_iid(model.weights)
        elif model.kernel == "markov":
            sspec = chains.scum_markov(np.asarray(model.P, dtype=float))
        else:
            sspec = chains.scum_geometric_memory(model.eps, model.rho, model.memory)
        L = model.window

        def run(chunk):
            W, theta = chains.scum_cftp(sspec, noise, chunk, length=L)
            out = []
            for k, r in enumerate(chunk):
                for j in range(L):
                    t = -(L - 1) + j
                    out.append(rec(r, (t,), W[k, j], theta[k], t + theta[k]))
            return out

    else:  # pragma: no cover - the config union is closed
        raise ValueError(f"unknown model {name!r}")

    parts = map_ordered(run, chunks, threads)
    records = [r for part in parts for r in part]
    if smp.unresolved == "abort":
        for r in records:
            if r.status == UNRESOLVED:
                raise UnresolvedError(
                    f"replica {r.replica} site {list(r.site)} unresolved at t_max={smp.t_max}",
                    replica=r.replica, site=r.site,
                )
    return records


# verification ----------------------------------------------------------------------


def _observable(cfg: ExperimentConfig, d: int):
    a = cfg.analysis
    box = Box.around_origin(d, a.observable_radius)
    origin = (0,) * d
    if a.observable == "spin":
        return single_spin(origin)
    if a.observable == "indicator":
        return indicator(origin, a.symbol)
    if a.observable == "block_sum":
        return block_spin_sum(box)
    if a.observable == "block_mean":
        return block_spin_mean(box)
    return block_value_sum(box, a.max_symbol)


def verify_table(cfg: ExperimentConfig, table: SampleTable) -> tuple[dict, list[tuple], bool]:
    """Run the configured analyses; returns (report sections, margin rows, all passed)."""
    a = cfg.analysis
    d = len(table.sites[0])
    sections: dict = {"model": table.model, "seed": table.seed, "replicas": int(len(table.replicas))}
    rows: list[tuple] = []
    ok = True
    origin = (0,) * d
    if origin not in table.sites:
        raise ValueError("samples do not contain the origin site")
    r0 = table.radii[:, table.sites.index(origin)]

    moments = {}
    for p in a.moment_orders:
        rep = radius_moments(r0, d, p, a.confidence, unresolved=table.unresolved)
        moments[p] = rep
        sections.setdefault("moments", []).append({
            "p": p, "estimate": rep.estimate, "ci": list(rep.ci), "tail_slope": rep.tail_slope,
            "tail_ci": rep.tail_ci, "unresolved_count": rep.unresolved_count, "warnings": rep.warnings,
        })
    if table.unresolved:
        raise UnresolvedError(f"{table.unresolved} unresolved records; refusing biased statistics")

    fact = None
    if a.factorization:
        if a.alpha is None:
            raise ValueError("factorization needs analysis.alpha")
        triples = admissible_triples(table.sites, a.max_triples)
        fact = factorization_test(table.radii, table.sites, a.alpha, triples, a.confidence)
        sections["factorization"] = {
            "alpha": fact.alpha, "triples": [list(map(list, t)) for t in fact.triples],
            "lhs": fact.lhs, "lhs_ci": fact.lhs_ci, "rhs": fact.rhs, "rhs_ci": fact.rhs_ci,
            "violations": fact.violations, "warnings": fact.warnings,
            "verdict": "PASS" if fact.passed else "FAIL",
        }
        rows.append(("factorization", "violations", float(len(fact.violations)), 0.0, "PASS" if fact.passed else "FAIL"))
        ok &= fact.passed

    src = KappaSource(a.kappa_source)
    if src is KappaSource.SECOND_MOMENT:
        stub = kappa_from_moments(moments.get(2) or radius_moments(r0, d, 2, a.confidence), src)
    elif src in (KappaSource.CONE, KappaSource.LEFT_FINITARY):
        stub = kappa_from_moments(moments.get(1) or radius_moments(r0, d, 1, a.confidence), src,
                                  alpha=a.alpha, factorization=fact)
    else:
        stub = kappa_from_moments(None, src, user_kappa=a.kappa)

    f = _observable(cfg, d)
    cols = [table.sites.index(s) for s in f.dep] if f.dep else []
    if any(s not in table.sites for s in f.dep):
        raise ValueError("samples do not cover the observable's dependence set")
    fvals = f.evaluate_many(table.values[:, cols]) if cols else np.full(len(table.replicas), f(None))
    gcb = verify_gcb(fvals, f, stub.kappa, a.lambdas, a.us, a.confidence, source=src,
                     min_replicas=a.min_replicas, check_variance=a.variance)
    sections["gcb"] = gcb.as_dict()
    sections["gcb"]["kappa_upper"] = stub.kappa_upper
    for lam, b, e, m in zip(gcb.lambdas, gcb.mgf_bound, gcb.mgf_empirical, gcb.mgf_margins):
        rows.append(("mgf", lam, e, b, "PASS" if m >= 0 else "FAIL"))
    for u, b, e, m in zip(gcb.us, gcb.tail_bound, gcb.tail_empirical, gcb.tail_margins):
        rows.append(("tail", u, e, b, "PASS" if m >= 0 else "FAIL"))
    if gcb.variance_margin is not None:
        rows.append(("variance", "", gcb.variance, gcb.variance_bound, "PASS" if gcb.variance_margin >= 0 else "FAIL"))
    ok &= gcb.verdict

    if a.blowup is not None:
        bl = a.blowup
        box = Box.around_origin(d, bl.radius)
        cols = [table.sites.index(s) for s in box.sites()]
        Y = table.values[:, cols]
        ev = ThresholdEvent(tuple(bl.scores), bl.c) if bl.event == "threshold" else PatternEvent(np.asarray(bl.patterns))
        out = []
        for eps in bl.eps:
            br = blowup_check(Y, ev, eps, stub.kappa, a.confidence)
            out.append({**br.__dict__, "status": br.status, "strict_pass": br.strict_pass})
            rows.append(("blowup", eps, br.nu_blow, br.bound, br.status))
            ok &= br.status != "FAIL"
        sections["blowup"] = out
    return sections, rows, bool(ok)


# scans ------------------------------------------------------------------------------------


def run_scan(cfg: ExperimentConfig, threads: int = 1) -> list[tuple]:
    """Long-format rows (parameter, value, size, statistic, estimate, ci_lo, ci_hi, status)."""
    from . import toeplitz

    sc = cfg.scan
    if sc is None:
        raise ValueError("config has no [scan] section")
    smp = cfg.sampler
    rows: list[tuple] = []
    for v in sc.values:
        for n in sc.sizes:
            try:
                rows.append(_scan_point(sc, smp, v, n, threads, toeplitz))
            except Exception as exc:  # recorded in-row, the scan continues
                rows.append((sc.parameter, v, n, sc.kind, "", "", "", f"ERROR: {type(exc).__name__}: {exc}"))
    return rows


def _scan_point(sc, smp, v, n, threads, toeplitz):
    if sc.kind == "ising_susceptibility":
        if sc.parameter != "beta":
            raise ValueError("the Ising scan varies beta")
        row = fields.susceptibility_scan(fields.IsingSpec(sc.d, v), [n], smp.replicas, smp.seed, smp.t_max,
                                         threads=threads)[0]
        return (sc.parameter, v, n, "var_ratio", row.ratio, row.ci_lo, row.ci_hi, "OK")
    if sc.kind == "toeplitz_block_ratio":
        kern = toeplitz.Kernel({tuple(e.offset): e.value for e in sc.kernel})
        row = toeplitz.block_ratio_scan(kern, [n])[0]
        return (sc.parameter, v, n, "block_ratio", row.ratio, row.ratio, row.ratio, "OK")
    if sc.kind == "renewal_theta":
        # two-point law f_1 = v, f_2 = 1 - v has hazard floor beta* = v
        f = (v, 1 - v) if v < 1 else (1.0,)
        th = chains.renewal_theta_batch(chains.RenewalSpec(f), NoiseSource(smp.seed), np.arange(n))
        m, lo, hi = mean_ci(th)
        return (sc.parameter, v, n, "theta_mean", m, lo, hi, "OK")
    if sc.kind == "return_time":
        if sc.P is None:
            raise ValueError("return_time scan needs P")
        spec = chains.ChainSpec(np.asarray(sc.P, dtype=float))
        path = chains.simulate_path(spec, n, NoiseSource(smp.seed), 0, int(v))
        rep = chains.return_time_tail(path, int(v))
        status = "OK" if rep.exponential_compatible else "INCONCLUSIVE"
        return (sc.parameter, v, n, "return_rate", rep.rate, rep.rate_lo, rep.rate_hi, status)
    raise ValueError(f"unknown scan kind {sc.kind!r}")

"""Command-line surface: simulate, equilibrium, sweep-map, sobol, fit, citywide, analyze.

Every subcommand writes delimited text outputs plus a `manifest.json` into the
output directory (``--out``, or $AMBUSIM_OUT, or ./ambusim_out). Re-running a
manifest (``ambusim rerun manifest.json``) reproduces the outputs byte for byte.
Report paths also render matplotlib figures next to the tables unless
``--no-plot`` is given.
"""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import click
import numpy as np

from . import __version__, citywide, game, plots, queueing, sensitivity
from .des import replicate, write_trace
from .scenario import (generate_synthetic_patients, load_scenario,
                       read_patient_records, record_origin, sample_locations,
                       write_patient_records, nearest_hospital)
from .stochastic import fit_exponential, kde_fit, ks_test, stream


def _out_dir(out: str | None) -> Path:
    path = Path(out or os.environ.get("AMBUSIM_OUT", "ambusim_out"))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(out: Path, argv: list) -> None:
    payload = {"tool": "ambusim", "version": __version__,
               "argv": [str(a) for a in argv]}
    (out / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _grid(spec: str) -> list:
    """Parse 'lo:hi:n' or a comma-separated list into floats."""
    if ":" in spec:
        lo, hi, n = spec.split(":")
        return [float(v) for v in np.linspace(float(lo), float(hi), int(n))]
    return [float(v) for v in spec.split(",")]


@click.group()
@click.version_option(version=__version__)
def main():
    """Simulation and equilibrium analysis of ambulance dispatching."""


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--profile", default=None, help="Strategy string, e.g. AAR; default per-hospital defaults.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--replications", default=1, show_default=True, type=int)
@click.option("--tglobal", type=click.Choice(["printed", "weighted"]), default="printed",
              show_default=True)
@click.option("--traffic", type=click.Choice(["on", "off"]), default=None,
              help="Toggle hour-of-day travel multipliers (network maps).")
@click.option("--trace/--no-trace", default=False, show_default=True)
@click.option("--out", default=None, type=click.Path())
def simulate(scenario_path, profile, seed, replications, tglobal, traffic, trace, out):
    """Run replicated simulations of one strategy profile."""
    sc = load_scenario(scenario_path)
    if traffic is not None:
        sc = sc.with_overrides(traffic=(traffic == "on"))
    profile = profile or "".join(h.default_strategy for h in sc.hospitals)
    seeds = [game.hash_seed(seed, r) for r in range(replications)]
    summary = replicate(sc, profile, seeds, collect_trace=trace)
    outdir = _out_dir(out)
    with open(outdir / "results.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "mean", "ci95_half"])
        for name in sorted(summary.means):
            mean, half = summary.means[name], summary.ci_half[name]
            writer.writerow([name,
                             "" if mean is None else repr(mean),
                             "" if half is None else repr(half)])
    if trace:
        write_trace(summary.results[0].trace, outdir / "trace.csv")
    metric = "t_global" if tglobal == "printed" else "t_global_weighted"
    tg = summary.means[metric]
    click.echo(f"profile {profile}: t_global[{tglobal}] = "
               f"{'undefined' if tg is None else f'{tg:.4f}'}")
    for h in sc.hospitals:
        s = summary.means[f"score_{h.id}"]
        click.echo(f"  H{h.id}: score = {'undefined' if s is None else f'{s:.4f}'}")
    _write_manifest(outdir, ["simulate", "--scenario", str(Path(scenario_path).resolve()),
                             "--profile", profile, "--seed", seed,
                             "--replications", replications, "--tglobal", tglobal]
                    + (["--traffic", traffic] if traffic else [])
                    + ["--trace" if trace else "--no-trace"])


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--replications", default=5, show_default=True, type=int)
@click.option("--jobs", default=1, show_default=True, type=int)
@click.option("--tglobal", type=click.Choice(["printed", "weighted"]), default="printed",
              show_default=True)
@click.option("--out", default=None, type=click.Path())
def equilibrium(scenario_path, seed, replications, jobs, tglobal, out):
    """Build the payoff tensor, list weak pure Nash profiles, and report the
    global-time-optimal profile."""
    sc = load_scenario(scenario_path)
    tensor = game.build_payoff_tensor(sc, replications, seed, jobs=jobs)
    nash = game.find_pure_nash(tensor)
    outdir = _out_dir(out)
    with open(outdir / "payoffs.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["profile"] + [f"score_{h.id}" for h in sc.hospitals] + ["invalid"])
        for p in game.all_profiles(sc.k):
            writer.writerow([p] + [repr(float(v)) for v in tensor.utilities[p]]
                            + [int(p in tensor.invalid)])
    with open(outdir / "nash.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["profile"])
        for p in (nash or []):
            writer.writerow([p])
    if nash is None:
        click.echo("inconsistent system: overcrowding detected, no equilibrium reported")
    else:
        click.echo(f"weak pure Nash profiles: {', '.join(nash) if nash else '(none)'}")
        best = game.optimal_profile(sc, replications, seed, tglobal_mode=tglobal, jobs=jobs)
        click.echo(f"global-time-optimal profile: {best}")
        (outdir / "optimal.csv").write_text(f"profile\n{best}\n")
    _write_manifest(outdir, ["equilibrium", "--scenario", str(Path(scenario_path).resolve()),
                             "--seed", seed, "--replications", replications,
                             "--jobs", 1, "--tglobal", tglobal])


@main.command("sweep-map")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--lambdas", required=True, help="Grid as lo:hi:n or comma list (1/h).")
@click.option("--mus", required=True, help="Grid as lo:hi:n or comma list (1/h).")
@click.option("--replications", default=1, show_default=True, type=int)
@click.option("--batches", default=game.DEFAULT_BATCHES, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--jobs", default=1, show_default=True, type=int)
@click.option("--plot/--no-plot", default=True, show_default=True)
@click.option("--out", default=None, type=click.Path())
def sweep_map(scenario_path, lambdas, mus, replications, batches, seed, jobs, plot, out):
    """Equilibrium-occurrence map over a (lambda, mu) grid."""
    sc = load_scenario(scenario_path)
    eq = game.equilibrium_map(sc, _grid(lambdas), _grid(mus), replications=replications,
                              batches=batches, seed=seed, jobs=jobs)
    outdir = _out_dir(out)
    game.write_map(eq, outdir / "map.csv")
    if plot:
        plots.occurrence_map_figure(eq, outdir / "map.png")
    n_incon = sum(c.inconsistent for c in eq.cells.values())
    click.echo(f"{len(eq.cells)} cells ({n_incon} inconsistent) -> {outdir / 'map.csv'}")
    _write_manifest(outdir, ["sweep-map", "--scenario", str(Path(scenario_path).resolve()),
                             "--lambdas", lambdas, "--mus", mus,
                             "--replications", replications, "--batches", batches,
                             "--seed", seed, "--jobs", 1,
                             "--plot" if plot else "--no-plot"])


@main.command()
@click.option("--n", default=1024, show_default=True, type=int, help="Base sample size (power of 2).")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--bootstrap", default=100, show_default=True, type=int)
@click.option("--horizon", default=240.0, show_default=True, type=float)
@click.option("--plot/--no-plot", default=True, show_default=True)
@click.option("--out", default=None, type=click.Path())
def sobol(n, seed, bootstrap, horizon, plot, out):
    """Sobol sensitivity of the three-hospital dispatch model (9 factors)."""
    space = sensitivity.dispatch_factor_space()
    model = sensitivity.dispatch_model(seed=game.hash_seed(seed, 1), horizon=horizon)
    indices = sensitivity.sobol_indices(model, space, n, seed=seed, bootstrap_n=bootstrap)
    outdir = _out_dir(out)
    sensitivity.write_indices(indices, outdir / "sobol.csv")
    if plot:
        plots.sobol_figure(indices, outdir / "sobol.png")
    order = np.argsort(-indices.total)
    top = ", ".join(f"{indices.names[i]} (ST={indices.total[i]:.3f})" for i in order[:3])
    click.echo(f"top total-order factors: {top}")
    _write_manifest(outdir, ["sobol", "--n", n, "--seed", seed, "--bootstrap", bootstrap,
                             "--horizon", horizon, "--plot" if plot else "--no-plot"])


@main.command()
@click.option("--service-samples", "samples_path", required=True, type=click.Path(exists=True),
              help="One service duration (minutes) per line.")
@click.option("--interarrivals", "ia_path", default=None, type=click.Path(exists=True),
              help="One inter-arrival time (hours) per line.")
@click.option("--bandwidth", default=None, type=float)
@click.option("--ks-subsample", default=20, show_default=True, type=int,
              help="Subsample size for the KS check (0 = all samples).")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--plot/--no-plot", default=True, show_default=True)
@click.option("--out", default=None, type=click.Path())
def fit(samples_path, ia_path, bandwidth, ks_subsample, seed, plot, out):
    """Fit the service-time KDE (with KS goodness of fit) and, optionally,
    the exponential inter-arrival rate."""
    samples = np.array([float(v) for v in Path(samples_path).read_text().split()])
    kde = kde_fit(samples, bandwidth=bandwidth)
    rng = stream(seed, 3)
    if ks_subsample and ks_subsample < samples.size:
        sub = rng.choice(samples, size=ks_subsample, replace=False)
    else:
        sub = samples
    ks = ks_test(sub, kde.cdf)
    rate = None
    if ia_path:
        gaps = np.array([float(v) for v in Path(ia_path).read_text().split()])
        rate = fit_exponential(gaps)
    outdir = _out_dir(out)
    with open(outdir / "fit.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["quantity", "value"])
        writer.writerow(["kde_bandwidth", repr(kde.bandwidth)])
        writer.writerow(["kde_n", kde.n])
        writer.writerow(["ks_statistic", repr(ks.statistic)])
        writer.writerow(["ks_p_value", repr(ks.p_value)])
        writer.writerow(["ks_n", ks.n])
        if rate is not None:
            writer.writerow(["interarrival_rate", repr(rate)])
            writer.writerow(["mean_interarrival_hours", repr(1.0 / rate)])
    if plot:
        plots.fit_figure(samples, kde, rate if rate is not None else 1.0, outdir / "fit.png")
    click.echo(f"KS: D={ks.statistic:.4f}, p={ks.p_value:.4f} (n={ks.n})")
    if rate is not None:
        click.echo(f"inter-arrival rate: {rate:.4f}/h (mean {1.0 / rate:.4f} h)")
    _write_manifest(outdir, ["fit", "--service-samples", str(Path(samples_path).resolve())]
                    + (["--interarrivals", str(Path(ia_path).resolve())] if ia_path else [])
                    + (["--bandwidth", bandwidth] if bandwidth else [])
                    + ["--ks-subsample", ks_subsample, "--seed", seed,
                       "--plot" if plot else "--no-plot"])


@main.command("citywide")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--records", "records_path", default=None, type=click.Path(exists=True),
              help="Patient records CSV; default: synthetic records from the scenario.")
@click.option("--synthetic-count", default=2000, show_default=True, type=int)
@click.option("--observed", "observed_path", default=None, type=click.Path(exists=True),
              help="hospital_id,mortality_rate file; required for the strategy sweep.")
@click.option("--curve", "curve_path", default=None, type=click.Path(exists=True),
              help="minutes,probability mortality-curve knots.")
@click.option("--threshold", default=0.10, show_default=True, type=float)
@click.option("--fix", "fixed_spec", default="", help="Fixed actions, e.g. '6=R,3=A'.")
@click.option("--exclude", "exclude_spec", default="", help="Hospital ids excluded from correlation.")
@click.option("--replications", default=10, show_default=True, type=int)
@click.option("--traffic", type=click.Choice(["on", "off"]), default=None)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--jobs", default=1, show_default=True, type=int)
@click.option("--plot/--no-plot", default=True, show_default=True)
@click.option("--out", default=None, type=click.Path())
def citywide_cmd(scenario_path, records_path, synthetic_count, observed_path, curve_path,
                 threshold, fixed_spec, exclude_spec, replications, traffic, seed, jobs,
                 plot, out):
    """Run the citywide pipeline: shared-patient pairs, pairwise equilibria,
    weighted strategies, and (with --observed) the full strategy sweep."""
    sc = load_scenario(scenario_path)
    if traffic is not None:
        sc = sc.with_overrides(traffic=(traffic == "on"))
    if records_path:
        records = read_patient_records(records_path)
    else:
        records = generate_synthetic_patients(sc, synthetic_count, game.hash_seed(seed, 5))
    assignments = [r.get("nearest_hospital",
                         nearest_hospital(sc, record_origin(r, sc.travel.kind),
                                          r["timestamp_hours"]))
                   for r in records]
    model = citywide.load_mortality_curve(curve_path) if curve_path else citywide.MortalityModel()
    fixed = {}
    if fixed_spec:
        for part in fixed_spec.split(","):
            hid, action = part.split("=")
            fixed[int(hid)] = action.strip().upper()
    excluded = [int(v) for v in exclude_spec.split(",") if v.strip()] if exclude_spec else []

    outdir = _out_dir(out)
    matrix = citywide.shared_matrix(sc, records, assignments)
    citywide.write_shared(matrix, outdir / "shared.csv")
    pairs = citywide.filter_pairs(matrix, threshold)
    (outdir / "pairs.csv").write_text(
        "hospital_i,hospital_j\n" + "".join(f"{i},{j}\n" for i, j in pairs))
    pair_strats = []
    for idx, pair in enumerate(pairs):
        n_pair = sum(1 for a in assignments if a in pair)
        pair_rate = sc.arrivals.base_rate * n_pair / max(len(assignments), 1)
        pair_strats.append(citywide.pairwise_equilibrium(
            sc, pair, pair_rate=pair_rate or None, seed=game.hash_seed(seed, 7, idx), jobs=jobs))
    with open(outdir / "pair_strategies.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hospital_i", "hospital_j", "accept_frac_i", "accept_frac_j",
                         "inconsistent"])
        for ps in pair_strats:
            i, j = ps.pair
            writer.writerow([i, j, repr(ps.frac_accept[i]), repr(ps.frac_accept[j]),
                             int(ps.inconsistent)])
    weighted = citywide.weighted_strategy(pair_strats, matrix)
    with open(outdir / "weighted.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hospital_id", "action", "ambiguous", "accept_mass", "redirect_mass"])
        for hid, ws in weighted.items():
            writer.writerow([hid, ws.action, int(ws.ambiguous),
                             repr(ws.accept_mass), repr(ws.redirect_mass)])
    click.echo(f"{len(pairs)} pairs above threshold {threshold:g}; weighted strategies: "
               + ", ".join(f"H{hid}={'/'.join(ws.actions)}" for hid, ws in weighted.items()))
    if plot:
        plots.shared_matrix_figure(matrix, outdir / "shared.png")

    if observed_path:
        observed = citywide.read_observed(observed_path)
        sweep = citywide.strategy_sweep(sc, observed, model=model, fixed=fixed,
                                        excluded=excluded, replications=replications,
                                        seed=game.hash_seed(seed, 11), jobs=jobs)
        citywide.write_sweep(sweep, outdir / "sweep.csv")
        if plot:
            plots.sweep_figure(sweep, outdir / "sweep.png")
        best = sweep[0]
        click.echo(f"best profile {best.profile}: r={best.pearson_r:.4f}, p={best.p_value:.4g}")
    _write_manifest(outdir, ["citywide", "--scenario", str(Path(scenario_path).resolve())]
                    + (["--records", str(Path(records_path).resolve())] if records_path
                       else ["--synthetic-count", synthetic_count])
                    + (["--observed", str(Path(observed_path).resolve())] if observed_path else [])
                    + (["--curve", str(Path(curve_path).resolve())] if curve_path else [])
                    + ["--threshold", threshold]
                    + (["--fix", fixed_spec] if fixed_spec else [])
                    + (["--exclude", exclude_spec] if exclude_spec else [])
                    + ["--replications", replications]
                    + (["--traffic", traffic] if traffic else [])
                    + ["--seed", seed, "--jobs", 1, "--plot" if plot else "--no-plot"])


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", default=None, type=click.Path())
def analyze(scenario_path, seed, out):
    """Analytical steady-state metrics: per-hospital Lq/Wq, system load ratio,
    and an analytical global-time estimate (catchment split by nearest hospital)."""
    sc = load_scenario(scenario_path)
    rng = stream(seed, 4)
    locs = sample_locations(sc, rng, 10000)
    shares = {h.id: 0 for h in sc.hospitals}
    travel_sum = {h.id: 0.0 for h in sc.hospitals}
    for origin in locs:
        hid = nearest_hospital(sc, origin)
        shares[hid] += 1
        travel_sum[hid] += sc.travel.travel_hours(origin, next(
            h.location for h in sc.hospitals if h.id == hid))
    outdir = _out_dir(out)
    rows = []
    t_totals, lam_js = [], []
    for h in sc.hospitals:
        lam_j = sc.arrivals.base_rate * shares[h.id] / len(locs)
        svc = sc.service_of(h)
        mu_j = svc.effective_rate
        cap = h.servers + (h.queue_buffer if h.queue_buffer is not None else 10 ** 6)
        params = queueing.QueueParams(arrival_rate=lam_j, service_rate=mu_j,
                                      servers=h.servers, capacity=cap)
        l_q = queueing.lq(params)
        lam_e = queueing.effective_arrival_rate(params)
        w_q = l_q / lam_e if lam_e > 0 else 0.0
        t_travel = travel_sum[h.id] / shares[h.id] if shares[h.id] else 0.0
        t_total = t_travel + w_q + svc.mean_hours
        rows.append([h.id, repr(lam_j), repr(mu_j), h.servers,
                     repr(params.utilization), repr(l_q), repr(w_q), repr(t_total)])
        if lam_j > 0:
            t_totals.append(t_total)
            lam_js.append(lam_j)
    tg = (sum(t * l for t, l in zip(t_totals, lam_js)) / sum(t_totals)) if t_totals else None
    with open(outdir / "analysis.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hospital_id", "lambda_j", "mu_j", "servers", "rho_j",
                         "Lq", "Wq", "T_total"])
        writer.writerows(rows)
        writer.writerow([])
        writer.writerow(["system_rho", repr(sc.rho)])
        writer.writerow(["t_global_printed", "" if tg is None else repr(tg)])
    click.echo(f"system rho = {sc.rho:.4f} "
               f"({'stable' if sc.rho < 1 else 'UNSTABLE under all-accept'})")
    for row in rows:
        click.echo(f"  H{row[0]}: rho_j={float(row[4]):.3f} Lq={float(row[5]):.4f} "
                   f"Wq={float(row[6]):.4f} h")
    _write_manifest(outdir, ["analyze", "--scenario", str(Path(scenario_path).resolve()),
                             "--seed", seed])


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True))
@click.option("--out", default=None, type=click.Path(),
              help="Target directory; default: the manifest's own directory.")
def rerun(manifest_path, out):
    """Re-execute the command recorded in a manifest, reproducing its outputs."""
    manifest = json.loads(Path(manifest_path).read_text())
    argv = manifest["argv"] + ["--out", out or str(Path(manifest_path).parent)]
    main.main(args=argv, standalone_mode=False)


if __name__ == "__main__":
    main()

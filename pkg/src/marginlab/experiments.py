"""Experiment implementations behind the CLI.

Each runner takes a resolved config dict and an output directory, writes
CSVs plus SVG figures, and returns the list of files it created. All
randomness derives from (seed, experiment, method, index) so nothing
depends on execution order.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import linearsim, nnet, reporting
from .analysis import MarginSearch, accuracy, grid_map, margin_dataset, oscillation_map, robust_accuracy
from .datasets import LabeledSet, SynthSpec, generate, load_idx, opposite_class_histogram
from .linearsim import OracleState
from .objectives import TrainConfig, train
from .perturb import PerturbSpec
from .seeding import child_seed
from .uncertainty import Ensemble


def _synth(resolved: dict, seed_tag: str = "dataset") -> LabeledSet:
    section = dict(resolved["dataset"])
    if "seed" not in section:
        section["seed"] = child_seed(resolved["seed"], seed_tag)
    return generate(SynthSpec(**section))


def _attack_spec(section: dict, method: str, entry=None) -> PerturbSpec:
    return PerturbSpec(
        epsilon=section["epsilon"],
        alpha=section["alpha"],
        max_steps=section["max_steps"],
        method=method if method in ("fgsm", "rfgsm", "ldp-pgd", "udp-pgd") else "ldp-pgd",
        randomize_steps=section.get("randomize_steps", False) and method in ("udp-pgd", "udpr"),
        random_start=section.get("random_start", False),
        entry=entry or section.get("entry", "input"),
    )


def _build_target(resolved: dict, method: str, input_dim: int, n_classes: int, encoder_split=None):
    t = resolved["train"]
    dims = (input_dim, *resolved.get("hidden_dims", t.get("hidden_dims", [24, 24])), n_classes)
    size = t.get("ensemble_size", 1)
    seed0 = child_seed(resolved["seed"], resolved["experiment"], method, "model")
    if size == 1:
        return nnet.build_mlp(dims, seed0, encoder_split=encoder_split)
    return Ensemble(
        [nnet.build_mlp(dims, child_seed(seed0, m), encoder_split=encoder_split) for m in range(size)]
    )


def _train_cfg(resolved: dict, method: str, probe=None, eps_override=None, entry=None) -> TrainConfig:
    t = resolved["train"]
    attack = dict(resolved.get("attack", {}))
    if eps_override is not None:
        attack["epsilon"] = eps_override
    objective = {"standard": "standard", "trades": "trades", "udpr": "udpr"}.get(method, "erm-p")
    spec = None
    if objective != "standard":
        engine = "udp-pgd" if method in ("udp-pgd", "udpr") else method if method != "trades" else "ldp-pgd"
        spec = _attack_spec(attack, engine, entry=entry)
    return TrainConfig(
        objective=objective,
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        learning_rate=t["learning_rate"],
        optimizer=t.get("optimizer", "adam"),
        perturb=spec,
        lam=t.get("lam", 0.5) if objective in ("trades", "udpr") else 0.0,
        seed=child_seed(resolved["seed"], resolved["experiment"], method, "train"),
        checkpoint_every=t.get("checkpoint_every", 50),
        probe=probe,
        lr_ramp=t.get("lr_ramp", False),
    )


def _data_ranges(data: LabeledSet, pad: float = 0.08):
    lo = data.samples.min(axis=0)
    hi = data.samples.max(axis=0)
    span = np.maximum(hi - lo, 1e-6)
    return (
        (float(lo[0] - pad * span[0]), float(hi[0] + pad * span[0])),
        (float(lo[1] - pad * span[1]), float(hi[1] + pad * span[1])),
    )


def _margin_search(resolved: dict) -> MarginSearch:
    m = resolved.get("margin", {})
    return MarginSearch(
        n_directions=m.get("n_directions", 32),
        max_radius=m.get("max_radius", 1.0),
        tol=m.get("tol", 1e-4),
        seed=child_seed(resolved["seed"], "margin-probes"),
    )


def run_toy_boundary(resolved: dict, outdir: Path) -> list[Path]:
    data = _synth(resolved)
    xr, yr = _data_ranges(data)
    res = resolved["grid"]["resolution"]
    search = _margin_search(resolved)
    files = []
    data.to_csv(outdir / "dataset.csv")
    files.append(outdir / "dataset.csv")
    summary = []
    for method in resolved["methods"]:
        target = _build_target(resolved, method, data.dim, data.class_count)
        trained, trace = train(target, data, _train_cfg(resolved, method))
        trace.to_csv(outdir / f"trace_{method}.csv")
        gm = grid_map(trained, xr, yr, res)
        gm.to_csv(outdir / f"grid_{method}.csv")
        reporting.save_boundary_figure(outdir / f"boundary_{method}.svg", gm, data, title=method)
        reporting.save_heatmap(
            outdir / f"entropy_{method}.svg", gm.xs, gm.ys, gm.entropy,
            "predictive entropy", title=f"{method} entropy", data=data,
        )
        report = margin_dataset(trained, data, search)
        report.to_csv(outdir / f"margins_{method}.csv")
        summary.append(
            (
                method,
                accuracy(trained, data),
                report.min_margin,
                report.max_margin,
                int(report.misclassified.sum()),
            )
        )
        files += [
            outdir / f"trace_{method}.csv",
            outdir / f"grid_{method}.csv",
            outdir / f"boundary_{method}.svg",
            outdir / f"entropy_{method}.svg",
            outdir / f"margins_{method}.csv",
        ]
    reporting.write_csv(
        outdir / "summary.csv",
        ["method", "train_accuracy", "min_margin", "max_margin", "misclassified"],
        summary,
    )
    files.append(outdir / "summary.csv")
    return files


def run_eps_sweep(resolved: dict, outdir: Path) -> list[Path]:
    data = _synth(resolved)
    search = _margin_search(resolved)
    rows = []
    series = {}
    for method in resolved["methods"]:
        xs, ys = [], []
        for eps in resolved["eps_values"]:
            target = _build_target(resolved, method, data.dim, data.class_count)
            cfg = _train_cfg(resolved, method, eps_override=eps)
            trained, _ = train(target, data, cfg)
            report = margin_dataset(trained, data, search)
            rows.append((method, float(eps), accuracy(trained, data), report.min_margin, report.max_margin))
            xs.append(eps)
            ys.append(report.min_margin)
        series[method] = (xs, ys)
    reporting.write_csv(
        outdir / "eps_sweep.csv",
        ["method", "epsilon", "train_accuracy", "min_margin", "max_margin"],
        rows,
    )
    reporting.save_lines(
        outdir / "eps_sweep.svg", "epsilon (train)", "dataset min-margin", series,
        title="margin vs training epsilon",
    )
    return [outdir / "eps_sweep.csv", outdir / "eps_sweep.svg"]


def run_oscillation(resolved: dict, outdir: Path) -> list[Path]:
    data = _synth(resolved)
    xr, yr = _data_ranges(data)
    res = resolved["grid"]["resolution"]
    files = []
    summary = []
    for method in resolved["methods"]:
        target = _build_target(resolved, method, data.dim, data.class_count)
        trained, trace = train(target, data, _train_cfg(resolved, method))
        counts = oscillation_map(trace.checkpoints, xr, yr, res)
        xs = np.linspace(xr[0], xr[1], res)
        ys = np.linspace(yr[0], yr[1], res)
        rows = [
            (float(xs[ix]), float(ys[iy]), int(counts[iy, ix]))
            for iy in range(res)
            for ix in range(res)
        ]
        reporting.write_csv(outdir / f"oscillation_{method}.csv", ["x", "y", "flips"], rows)
        reporting.save_heatmap(
            outdir / f"oscillation_{method}.svg", xs, ys, counts,
            "prediction flips", title=f"{method} boundary oscillation", data=data,
        )
        summary.append((method, int(counts.sum()), accuracy(trained, data)))
        files += [outdir / f"oscillation_{method}.csv", outdir / f"oscillation_{method}.svg"]
    reporting.write_csv(
        outdir / "oscillation_summary.csv", ["method", "total_flips", "final_accuracy"], summary
    )
    files.append(outdir / "oscillation_summary.csv")
    return files


def run_histogram(resolved: dict, outdir: Path) -> list[Path]:
    if resolved.get("idx"):
        idx = resolved["idx"]
        data = load_idx(
            idx["train_images"], idx["train_labels"],
            subsample=resolved.get("subsample"), seed=child_seed(resolved["seed"], "idx"),
        )
        label = "nearest opposite-class distance (pixel space, [0,1] scale)"
    else:
        data = _synth(resolved)
        label = "nearest opposite-class distance"
    edges, counts, distances = opposite_class_histogram(data, resolved["bins"])
    reporting.write_csv(
        outdir / "histogram.csv",
        ["bin_lo", "bin_hi", "count"],
        [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(len(counts))],
    )
    reporting.write_csv(
        outdir / "distances.csv",
        ["index", "distance"],
        [(i, float(d)) for i, d in enumerate(distances)],
    )
    reporting.save_histogram(outdir / "histogram.svg", edges, counts, label)
    return [outdir / "histogram.csv", outdir / "distances.csv", outdir / "histogram.svg"]


def run_theorem1(resolved: dict, outdir: Path) -> list[Path]:
    files = []
    summary = []
    series = {}
    for eta in resolved["etas"]:
        state = OracleState(
            omega=resolved["omega0"], mu1=resolved["mu1"], mu2=resolved["mu2"],
            sigma=resolved["sigma"], eta=eta, seed=child_seed(resolved["seed"], "theorem1", eta),
        )
        stats = linearsim.run_chain(state, resolved["steps"], resolved["replicas"])
        name = f"trajectory_eta{eta:g}.csv"
        stats.to_csv(outdir / name)
        files.append(outdir / name)
        rate = linearsim.fit_contraction_rate(stats, floor=resolved.get("rate_floor", 1.0))
        target = 1.0 - eta / 2.0
        summary.append((float(eta), rate, target, abs(rate - target) / target))
        series[f"eta={eta:g}"] = (np.arange(len(stats.mean_abs_err)), stats.mean_abs_err)
    cond = resolved["conditional"]
    state = OracleState(
        omega=cond["omega"], mu1=resolved["mu1"], mu2=resolved["mu2"],
        sigma=resolved["sigma"], eta=cond["eta"],
        seed=child_seed(resolved["seed"], "theorem1", "conditional"),
    )
    mean, se = linearsim.one_step_conditional_mean(state, cond["draws"])
    target = (1 - cond["eta"] / 2) * cond["omega"] + (cond["eta"] / 2) * state.omega_star
    reporting.write_csv(
        outdir / "conditional_mean.csv",
        ["omega", "eta", "draws", "mean_next", "mc_se", "closed_form"],
        [(cond["omega"], cond["eta"], cond["draws"], mean, se, target)],
    )
    reporting.write_csv(
        outdir / "contraction_rates.csv",
        ["eta", "fitted_rate", "target_rate", "relative_error"],
        summary,
    )
    reporting.save_lines(
        outdir / "contraction.svg", "step", "mean |omega - omega*|", series,
        title="boundary contraction", logy=True,
    )
    files += [outdir / "conditional_mean.csv", outdir / "contraction_rates.csv", outdir / "contraction.svg"]
    return files


def run_ldp_failure(resolved: dict, outdir: Path) -> list[Path]:
    rows = []
    for chain in range(resolved["chains"]):
        state = OracleState(
            omega=resolved["omega0"], mu1=resolved["mu1"], mu2=resolved["mu2"],
            sigma=resolved["sigma"], eta=resolved["eta"],
            seed=child_seed(resolved["seed"], "ldp-failure", chain),
        )
        ldp = linearsim.run_decision_chain(state, resolved["steps"], "ldp", resolved["epsilon"])
        udp = linearsim.run_decision_chain(state, resolved["steps"], "udp")
        rows.append(
            (
                chain,
                ldp.accuracy_on_means,
                ldp.boundary,
                ldp.orientation,
                udp.accuracy_on_means,
                udp.boundary,
                abs(udp.boundary - state.omega_star),
            )
        )
    reporting.write_csv(
        outdir / "ldp_failure.csv",
        ["chain", "ldp_accuracy", "ldp_boundary", "ldp_orientation",
         "udp_accuracy", "udp_boundary", "udp_abs_err"],
        rows,
    )
    state = OracleState(
        omega=resolved["omega0"], mu1=resolved["mu1"], mu2=resolved["mu2"],
        sigma=resolved["sigma"], eta=resolved["eta"],
        seed=child_seed(resolved["seed"], "ldp-failure", "curves"),
    )
    steps = min(resolved["steps"], 200)
    udp_stats = linearsim.run_chain(state, steps, 1000, "udp")
    ldp_stats = linearsim.run_chain(state, steps, 1000, "ldp", epsilon=resolved["epsilon"])
    reporting.save_lines(
        outdir / "ldp_failure.svg", "step", "mean |omega - omega*|",
        {"udp": (np.arange(steps + 1), udp_stats.mean_abs_err),
         "ldp": (np.arange(steps + 1), ldp_stats.mean_abs_err)},
        title=f"epsilon={resolved['epsilon']:g} past half the class separation",
    )
    return [outdir / "ldp_failure.csv", outdir / "ldp_failure.svg"]


def run_capacity_sweep(resolved: dict, outdir: Path) -> list[Path]:
    data = _synth(resolved)
    test = _synth(dict(resolved, dataset=dict(resolved["dataset"])), seed_tag="dataset-test")
    method = resolved["method"]
    probe = _attack_spec(resolved["probe"], resolved["probe"].get("method", "ldp-pgd"))
    rows = []
    clean_curve, robust_curve = [], []
    for mult in resolved["multipliers"]:
        hidden = [int(h * mult) for h in resolved["base_hidden"]]
        local = dict(resolved, hidden_dims=hidden)
        target = _build_target(local, f"{method}-m{mult}", data.dim, data.class_count)
        cfg = _train_cfg(dict(local, experiment=resolved["experiment"]), method)
        trained, _ = train(target, data, cfg)
        clean_train = accuracy(trained, data)
        clean_test = accuracy(trained, test)
        robust = robust_accuracy(trained, test, probe)
        rows.append((int(mult), ",".join(map(str, hidden)), clean_train, clean_test, robust))
        clean_curve.append(clean_test)
        robust_curve.append(robust)
    reporting.write_csv(
        outdir / "capacity_sweep.csv",
        ["multiplier", "hidden_dims", "clean_train_accuracy", "clean_test_accuracy", "robust_test_accuracy"],
        rows,
    )
    mults = [int(m) for m in resolved["multipliers"]]
    reporting.save_lines(
        outdir / "capacity_sweep.svg", "width multiplier", "accuracy",
        {"clean test": (mults, clean_curve), "robust test": (mults, robust_curve)},
        title=f"{method} capacity sweep",
    )
    return [outdir / "capacity_sweep.csv", outdir / "capacity_sweep.svg"]


def _load_idx_pair(resolved: dict):
    idx = resolved["idx"]
    seed = child_seed(resolved["seed"], "idx-train")
    train_set = load_idx(
        idx["train_images"], idx["train_labels"], subsample=resolved.get("subsample"), seed=seed
    )
    test_set = None
    if idx.get("test_images") and idx.get("test_labels"):
        test_set = load_idx(idx["test_images"], idx["test_labels"])
    return train_set, test_set


def run_latent_lowdata(resolved: dict, outdir: Path) -> list[Path]:
    train_set, test_set = _load_idx_pair(resolved)
    split = resolved["encoder_split"]
    rows = []
    files = []
    for method in resolved["methods"]:
        target = _build_target(resolved, method, train_set.dim, train_set.class_count, encoder_split=split)
        cfg = _train_cfg(resolved, method, entry="latent" if method != "standard" else None)
        trained, trace = train(target, train_set, cfg, test_data=test_set)
        trace.to_csv(outdir / f"trace_{method}.csv")
        files.append(outdir / f"trace_{method}.csv")
        rows.append(
            (
                method,
                accuracy(trained, train_set),
                accuracy(trained, test_set) if test_set is not None else float("nan"),
            )
        )
    reporting.write_csv(
        outdir / "latent_lowdata.csv",
        ["method", "clean_train_accuracy", "clean_test_accuracy"],
        rows,
    )
    files.append(outdir / "latent_lowdata.csv")
    return files


def run_catastrophic_probe(resolved: dict, outdir: Path) -> list[Path]:
    train_set, test_set = _load_idx_pair(resolved)
    if test_set is not None and resolved.get("eval_points"):
        k = min(resolved["eval_points"], test_set.size)
        rng = np.random.default_rng(child_seed(resolved["seed"], "probe-eval"))
        keep = np.sort(rng.choice(test_set.size, size=k, replace=False))
        test_set = LabeledSet(test_set.samples[keep], test_set.labels[keep], test_set.class_count)
    probe = _attack_spec(resolved["probe"], resolved["probe"].get("method", "ldp-pgd"))
    eps = resolved["attack_epsilon"]
    t = resolved["train"]
    files = []
    series = {}
    summary = []
    for method, engine, steps in (("fgsm", "fgsm", 1), ("udp-pgd", "udp-pgd", 1)):
        spec = PerturbSpec(epsilon=eps, alpha=eps, max_steps=steps, method=engine)
        cfg = TrainConfig(
            objective="erm-p",
            epochs=t["epochs"],
            batch_size=t["batch_size"],
            learning_rate=t["learning_rate"],
            optimizer=t.get("optimizer", "adam"),
            perturb=spec,
            seed=child_seed(resolved["seed"], "catastrophic", method),
            checkpoint_every=t.get("checkpoint_every", 25),
            probe=probe,
        )
        target = _build_target(resolved, f"catastrophic-{method}", train_set.dim, train_set.class_count)
        trained, trace = train(target, train_set, cfg, test_data=test_set)
        trace.to_csv(outdir / f"trace_{method}.csv")
        files.append(outdir / f"trace_{method}.csv")
        robust = np.array(trace.robust_accuracy)
        series[method] = (list(trace.iterations), list(robust))
        peak = float(robust.max())
        final = float(robust[-1])
        summary.append((method, peak, final, peak - final))
    reporting.write_csv(
        outdir / "catastrophic_summary.csv",
        ["method", "peak_robust_accuracy", "final_robust_accuracy", "drop"],
        summary,
    )
    reporting.save_lines(
        outdir / "catastrophic.svg", "iteration", "robust accuracy (probe)",
        series, title="single-step training robustness over time",
    )
    files += [outdir / "catastrophic_summary.csv", outdir / "catastrophic.svg"]
    return files


RUNNERS = {
    "toy-boundary": run_toy_boundary,
    "eps-sweep": run_eps_sweep,
    "oscillation": run_oscillation,
    "histogram": run_histogram,
    "theorem1": run_theorem1,
    "ldp-failure": run_ldp_failure,
    "capacity-sweep": run_capacity_sweep,
    "latent-lowdata": run_latent_lowdata,
    "catastrophic-probe": run_catastrophic_probe,
}

"""Markdown reporting of experiment results.

Four tables per run, mirroring the usual layout of replicate studies:
mean accuracy with 95% confidence intervals on the representative set and
on the bad-mask set, plus the pairwise model comparisons per algorithm with
Holm-corrected significance asterisks. The CV-only baselines and the
de-identification rates are summarized alongside.
"""

from __future__ import annotations

from collections import defaultdict

from .experiment import STAGE_BASE, STAGE_CV, RunResult, _stage_order
from .stats import SampleSet, confidence_interval_95, holm_bonferroni, mean_var, students_t_test

_ORDINALS = {1: "1st", 2: "2nd", 3: "3rd"}


def _stage_label(stage: str) -> str:
    if stage == STAGE_CV:
        return "CV only"
    if stage == STAGE_BASE:
        return "Base"
    k = int(stage.split("_")[1])
    return f"{_ORDINALS.get(k, f'{k}th')} ref."


def _samples(
    results: list[RunResult], metric: str
) -> dict[str, dict[str, SampleSet]]:
    """algorithm -> stage -> accuracy sample over replicates (in percent)."""
    grouped: dict[str, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for r in results:
        if r.stage == STAGE_CV:
            continue
        grouped[r.algorithm][r.stage].append(100.0 * getattr(r, metric))
    out: dict[str, dict[str, SampleSet]] = {}
    for algorithm, stages in grouped.items():
        out[algorithm] = {
            stage: SampleSet(vals, label=f"{algorithm}/{stage}")
            for stage, vals in stages.items()
            if len(vals) >= 2
        }
    return out


def _fmt_p(p: float) -> str:
    if p < 1e-8:
        return "<1e-08"
    return f"{p:.2e}"


def _accuracy_table(samples: dict[str, dict[str, SampleSet]], algorithms: list[str]) -> list[str]:
    lines = ["| Model | " + " | ".join(f"{a} mean acc | {a} 95% CI" for a in algorithms) + " |"]
    lines.append("|" + "---|" * (1 + 2 * len(algorithms)))
    stages = sorted({s for v in samples.values() for s in v}, key=_stage_order)
    for stage in stages:
        cells = [_stage_label(stage)]
        for a in algorithms:
            s = samples.get(a, {}).get(stage)
            if s is None:
                cells += ["-", "-"]
            else:
                m, _ = mean_var(s)
                lo, hi = confidence_interval_95(s)
                cells += [f"{m:.2f}", f"({lo:.2f}, {hi:.2f})"]
        lines.append("| " + " | ".join(cells) + " |")
    return lines


def _comparison_table(samples: dict[str, dict[str, SampleSet]], algorithms: list[str], alpha: float) -> list[str]:
    lines = ["| Model Comparison | " + " | ".join(algorithms) + " |"]
    lines.append("|" + "---|" * (1 + len(algorithms)))
    pair_cells: dict[str, dict[tuple[str, str], str]] = {}
    for a in algorithms:
        stages = sorted(samples.get(a, {}), key=_stage_order)
        pairs = [(s1, s2) for i, s1 in enumerate(stages) for s2 in stages[i + 1:]]
        ps = [students_t_test(samples[a][s1], samples[a][s2]).p_value for s1, s2 in pairs]
        _, flags = holm_bonferroni(ps, alpha) if ps else ([], [])
        pair_cells[a] = {
            pair: _fmt_p(p) + ("*" if sig else "")
            for pair, p, sig in zip(pairs, ps, flags)
        }
    all_pairs = sorted(
        {pair for cells in pair_cells.values() for pair in cells},
        key=lambda pr: (_stage_order(pr[0]), _stage_order(pr[1])),
    )
    for s1, s2 in all_pairs:
        row = [f"{_stage_label(s1)} vs. {_stage_label(s2)}"]
        row += [pair_cells.get(a, {}).get((s1, s2), "-") for a in algorithms]
        lines.append("| " + " | ".join(row) + " |")
    return lines


def build_report(results: list[RunResult], alpha: float = 0.05) -> str:
    algorithms = sorted({r.algorithm for r in results})
    cv = {r.algorithm: r for r in results if r.stage == STAGE_CV}
    rep = _samples(results, "rep_accuracy")
    bad = _samples(results, "bad_accuracy")

    lines: list[str] = ["# Replicate run report", ""]
    if cv:
        lines.append("## CV mask baselines")
        lines.append("")
        lines.append("| Algorithm | representative acc | bad-set acc | de-id pass |")
        lines.append("|---|---|---|---|")
        for a in algorithms:
            if a in cv:
                r = cv[a]
                lines.append(
                    f"| {a} | {100 * r.rep_accuracy:.2f} | {100 * r.bad_accuracy:.2f} "
                    f"| {r.deid_pass}/{r.deid_total} |"
                )
        lines.append("")

    n = max((len(s.values) for v in rep.values() for s in v.values()), default=0)
    lines.append(f"## Table 1: model accuracies on the representative set (n={n}, 95% CI)")
    lines.append("")
    lines += _accuracy_table(rep, algorithms)
    lines.append("")
    lines.append("## Table 2: pairwise comparisons, representative set (Holm-corrected, * = significant)")
    lines.append("")
    lines += _comparison_table(rep, algorithms, alpha)
    lines.append("")
    lines.append(f"## Table 3: model accuracies on the bad-mask set (n={n}, 95% CI)")
    lines.append("")
    lines += _accuracy_table(bad, algorithms)
    lines.append("")
    lines.append("## Table 4: pairwise comparisons, bad-mask set (Holm-corrected, * = significant)")
    lines.append("")
    lines += _comparison_table(bad, algorithms, alpha)
    lines.append("")

    lines.append("## De-identification on the bad-mask set")
    lines.append("")
    lines.append("| Algorithm | stage | frames passed |")
    lines.append("|---|---|---|")
    per_stage: dict[tuple[str, str], list[RunResult]] = defaultdict(list)
    for r in results:
        if r.stage != STAGE_CV and r.deid_total:
            per_stage[(r.algorithm, r.stage)].append(r)
    for (a, stage), rs in sorted(per_stage.items(), key=lambda kv: (kv[0][0], _stage_order(kv[0][1]))):
        passed = sum(r.deid_pass for r in rs)
        total = sum(r.deid_total for r in rs)
        pct = 100.0 * passed / total if total else 0.0
        lines.append(f"| {a} | {_stage_label(stage)} | {passed}/{total} ({pct:.2f}%) |")
    lines.append("")
    return "\n".join(lines)

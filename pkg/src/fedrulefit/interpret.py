"""Base-function and variable importances, top-rule tables, subgroup rates."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import ClientPartition
from .featurize import pooled_column_sd
from .model import RuleFitModel
from .rulegen import Rule


@dataclass(frozen=True)
class ImportanceReport:
    rule_importance: np.ndarray
    linear_importance: np.ndarray
    variable_importance: np.ndarray
    supports: np.ndarray
    rule_exp_coef: np.ndarray
    linear_exp_coef: np.ndarray
    rule_labels: tuple[str, ...]
    linear_covariates: tuple[int, ...]
    feature_names: tuple[str, ...]
    scale: float = 1.0

    @property
    def rescaled(self) -> bool:
        return bool(self.scale != 1.0)

    def to_dict(self) -> dict:
        return {
            "rescaled_to_100": self.rescaled,
            "rules": [
                {"rule": lab, "exp_coef": float(e), "importance": float(i), "support": float(s)}
                for lab, e, i, s in zip(self.rule_labels, self.rule_exp_coef,
                                        self.rule_importance, self.supports)
            ],
            "linear_terms": [
                {"covariate": self.feature_names[j], "exp_coef": float(e), "importance": float(i)}
                for j, e, i in zip(self.linear_covariates, self.linear_exp_coef,
                                   self.linear_importance)
            ],
            "variable_importance": {
                n: float(v) for n, v in zip(self.feature_names, self.variable_importance)
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def base_importance(model: RuleFitModel, partition: ClientPartition):
    """|coefficient| x pooled SD of each rule column and each linear column.

    Clients contribute only per-column sample SDs and their row counts.
    """
    rule_sd = pooled_column_sd([model.rules.evaluate(d.covariates) for d in partition.clients])
    lin_sd = pooled_column_sd([model.linear_spec.transform(d.covariates)
                               for d in partition.clients])
    return (np.abs(model.coefficients.rules) * rule_sd,
            np.abs(model.coefficients.linear) * lin_sd)


def variable_importance(model: RuleFitModel, rule_imp, linear_imp) -> np.ndarray:
    """Linear-term importance plus each rule's importance shared evenly over its covariates."""
    out = np.zeros(model.p)
    out[model.linear_spec.included] += linear_imp
    for rule, imp in zip(model.rules, rule_imp):
        cov = rule.covariates
        out[list(cov)] += imp / len(cov)
    return out


def importance_report(model: RuleFitModel, partition: ClientPartition,
                      rescale: bool = True) -> ImportanceReport:
    rule_imp, lin_imp = base_importance(model, partition)
    var_imp = variable_importance(model, rule_imp, lin_imp)
    # one common factor keeps sum(variable) == sum(base) after rescaling
    scale = 1.0
    if rescale:
        top = max(rule_imp.max(initial=0.0), lin_imp.max(initial=0.0))
        if top > 0:
            scale = 100.0 / top
    return ImportanceReport(
        rule_importance=rule_imp * scale,
        linear_importance=lin_imp * scale,
        variable_importance=var_imp * scale,
        supports=model.supports,
        rule_exp_coef=np.exp(model.coefficients.rules),
        linear_exp_coef=np.exp(model.coefficients.linear),
        rule_labels=tuple(r.display(model.feature_names) for r in model.rules),
        linear_covariates=tuple(int(j) for j in model.linear_spec.included),
        feature_names=model.feature_names,
        scale=scale,
    )


def top_rules(report: ImportanceReport, k: int = 5, min_support: float = 0.1) -> list[dict]:
    """Most important rules with support above ``min_support``.

    Ties on importance fall back to higher support, then the rule text.
    """
    if k <= 0:
        return []
    idx = [i for i, s in enumerate(report.supports) if s > min_support]
    idx.sort(key=lambda i: (-report.rule_importance[i], -report.supports[i],
                            report.rule_labels[i]))
    return [
        {
            "index": i,
            "rule": report.rule_labels[i],
            "exp_coef": float(report.rule_exp_coef[i]),
            "importance": float(report.rule_importance[i]),
            "support": float(report.supports[i]),
        }
        for i in idx[:k]
    ]


def format_rule_table(rows: list[dict]) -> str:
    """Aligned text table with columns No., Rules, exp(coef.), importance, support."""
    header = ("No.", "Rules", "exp(coef.)", "Rule importance", "Support")
    body = [
        (f"Rule {n}", r["rule"], f"{r['exp_coef']:.2f}", f"{r['importance']:.0f}",
         f"{r['support']:.2f}")
        for n, r in enumerate(rows, start=1)
    ]
    widths = [max(len(row[c]) for row in [header, *body]) for c in range(5)]
    lines = []
    for row in [header, *body]:
        cells = [row[0].ljust(widths[0]), row[1].ljust(widths[1])]
        cells += [row[c].rjust(widths[c]) for c in range(2, 5)]
        lines.append(" | ".join(cells))
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines)


def subgroup_rates(rule: Rule, partition: ClientPartition):
    """Pooled positive rate inside and outside the rule's subgroup.

    A side with no rows is reported as ``None``.
    """
    pos_in = n_in = pos_out = n_out = 0
    for d in partition.clients:
        fired = rule.evaluate(d.covariates)
        y = d.outcomes
        pos_in += int(y[fired].sum())
        n_in += int(fired.sum())
        pos_out += int(y[~fired].sum())
        n_out += int((~fired).sum())
    return (pos_in / n_in if n_in else None, pos_out / n_out if n_out else None)

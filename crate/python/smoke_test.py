"""Smoke test for the `rwe` extension module.

Build and install first:
    pip install --no-build-isolation -e crates/py
then run:
    python3 python/smoke_test.py
"""

import json
import math
import tempfile
from pathlib import Path

import rwe


def check(cond, what):
    if not cond:
        raise AssertionError(what)
    print(f"ok  {what}")


def main():
    cohort, truth = rwe.synthesize("heterogeneous", n=1200, seed=3)
    check(len(cohort) == 1200, "synthesize returns the requested cohort size")
    check(truth["format"] == "rwe-synth-truth" and len(truth["rows"]) == 1200, "ground truth sidecar")

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cohort.write(tmp / "cohort.jsonl")
        again = rwe.Cohort.read(tmp / "cohort.jsonl")
        check(again.ids() == cohort.ids(), "cohort round trip through JSON lines")

        config = "seed = 5\n[te]\ncv_folds = 0\n[futility.te]\ncv_folds = 0\n"
        result = rwe.run(config, cohort=cohort, drugs=["tocilizumab"], output_dir=str(tmp / "out"))
        report = result.report
        check(report["drugs"][0]["status"] == "completed", "pipeline completes for tocilizumab")
        check(json.loads(result.report_json())["seed"] == 5, "report carries its seed")

        model = result.model("tocilizumab")
        loaded = rwe.Model.load(tmp / "out" / "tocilizumab" / "model.json")
        check(loaded.to_json() == model.to_json(), "model bundle round trip")

        patient = {name: None for name in model.features}
        score = model.score(patient)
        check(0.0 <= score <= 1.0, "all-missing patient scores")
        e = model.explain({"temperature_day1": 38.9})["explanation"]
        total = e["base"] + sum(c["contribution"] for c in e["contributions"])
        check(abs(total - e["final"]) < 1e-9, "contributions add up to the margin")

        svc = rwe.ScoringService(str(tmp / "out"))
        check([d["drug"] for d in svc.drugs()] == ["tocilizumab"], "scoring service lists models")
        try:
            svc.score("tocilizumab", {"features": {"not_a_feature": 1.0}})
        except ValueError as err:
            check("not_a_feature" in str(err), "unknown feature rejected")
        else:
            raise AssertionError("unknown feature accepted")
        try:
            svc.score("remdesivir", {})
        except KeyError:
            check(True, "unknown drug raises KeyError")
        else:
            raise AssertionError("unknown drug accepted")

    time = [1, 2, 2, 3, 4, 5, 6, 7]
    event = [True, False, True, True, False, True, False, True]
    treated = [True, False, True, False, True, False, True, False]
    fit = rwe.fit_cox(time, event, treated)
    check(fit["converged"] and math.isfinite(fit["hazard_ratios"][0]), "Cox fit")
    steps = rwe.kaplan_meier([1, 2, 3, 4], [True, False, True, False])
    check(abs(steps[0]["survival"] - 0.75) < 1e-12 and abs(steps[-1]["survival"] - 0.375) < 1e-12, "Kaplan-Meier")

    age = [60.0 + (i % 30) for i in range(400)]
    treated = [a > 72 if i % 5 else a <= 72 for i, a in enumerate(age)]
    p = rwe.fit_propensity({"age": age}, treated, seed=1)
    check(len(p["weights"]) == 400 and all(w > 0 for w in p["weights"]), "propensity weights")
    print("all checks passed")


if __name__ == "__main__":
    main()

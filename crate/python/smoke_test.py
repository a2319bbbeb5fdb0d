"""Smoke test for the Python bindings.

    pip install -e crates/py --no-build-isolation
    python python/smoke_test.py
"""

import json
import os
import tempfile

import preclin


def main():
    study = preclin.Study.dog_reference()
    assert study.doses == [2.0, 4.0, 8.0, 16.0, 22.0, 28.0, 40.0, 54.0, 70.0]
    study = preclin.Study.from_toml(study.to_toml().replace("max_cohorts = 7", "max_cohorts = 11"))

    trial = preclin.Trial(study)
    assert trial.status == "enrolling"
    assert trial.recommend() == 4.0

    before = trial.to_json()
    hypo = trial.whatif(4.0, 1)
    assert trial.to_json() == before, "whatif must not change the trial"

    entry = trial.record(4.0, [1, 0, 0])
    assert abs(entry["weight"] - 0.26) < 0.05, entry
    assert hypo["summary"] == trial.summary()

    for dose, dlts in [(4.0, 0), (2.0, 0), (8.0, 3)]:
        trial.record(dose, [1] * dlts + [0] * (3 - dlts), replay=True)
    weights = [round(e["weight"], 3) for e in trial.trace()]
    print("example 2 weights:", weights)

    try:
        trial.record(5.0, [0, 0, 0])
    except preclin.PreclinError as e:
        print("rejected:", e)
    else:
        raise AssertionError("off-grid dose accepted")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "session.json")
        trial.save(path)
        again = preclin.Trial.load(path)
        assert again.summary() == trial.summary()
        assert json.loads(again.to_json()) == json.loads(trial.to_json())

    summary = trial.summary()
    print("posterior weight:", round(summary["posterior_weight"], 3))

    oc = study.simulate(procedures="A,C", reps=2, seed=1)
    rows = oc.strip().splitlines()
    assert len(rows) == 1 + 8 * 2, rows[:3]
    print("simulate ok:", rows[0])
    print("smoke test passed")


if __name__ == "__main__":
    main()

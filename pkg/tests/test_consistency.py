"""Cross-executor agreement on configurations with listings and contractions.

Every executor routes accesses through the same resource-space rewriting, so
collection listings and merged tuple resources must behave identically under
sequential, interleaved, transactional, and parallel execution.
"""

import random

from surebuild.corpus import random_collection_configuration
from surebuild.executor import run_parallel, run_sequential
from surebuild.inference import infer_until_valid
from surebuild.oracle import theorem_check
from surebuild.txn import predicted_sets, random_policy, run_locking, run_mvto


def test_listing_and_contraction_configs_agree_everywhere():
    rng = random.Random(86420)
    for i in range(60):
        cfg = random_collection_configuration(rng)
        seq = run_sequential(cfg)
        result = theorem_check(cfg)
        assert result.passed, result.reason
        for k in range(3):
            seed = random.Random(i * 10 + k)
            mvto = run_mvto(cfg, policy=random_policy(seed), respect_edges=False)
            assert mvto.final_state.digest() == seq.final_state.digest()
            seed = random.Random(i * 10 + k)
            lock = run_locking(
                cfg, predicted_sets(seq), policy=random_policy(seed), respect_edges=False
            )
            assert lock.final_state.digest() == seq.final_state.digest()
        fixed, _, _ = infer_until_valid(cfg)
        par, report = run_parallel(fixed, 3)
        assert report.valid
        assert par.final_state.digest() == seq.final_state.digest()


def test_incremental_works_with_listings():
    from surebuild.inference import make_snapshot, run_incremental
    from surebuild.corpus import random_mutation

    rng = random.Random(13579)
    checked = 0
    attempts = 0
    while checked < 15 and attempts < 300:
        attempts += 1
        cfg, _, _ = infer_until_valid(random_collection_configuration(rng))
        prior = run_sequential(cfg)
        db = make_snapshot(cfg, prior.final_state)
        if not db.incremental_eligible:
            continue
        mutated = random_mutation(rng, prior.final_state)
        result = run_incremental(cfg, db, prior.per_task, mutated)
        full = run_sequential(cfg.with_initial(mutated))
        assert result.final_state.digest() == full.final_state.digest()
        checked += 1
    assert checked == 15

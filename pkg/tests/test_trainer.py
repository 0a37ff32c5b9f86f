"""Training loop: cache law, loss plumbing, checkpoint/resume identity."""

import numpy as np
import pytest

from styleinv.corpus import gen_corpus
from styleinv.embedder import init_embednet, init_single_embednet
from styleinv.generator import build_generator, synthesize
from styleinv.perceptual import build_phi, distance
from styleinv.trainer import (SupervisionCache, TrainConfig, compute_losses,
                              holdout_metrics, inversion_loss,
                              latest_checkpoint, load_checkpoint,
                              save_checkpoint, train, update_cache)

STEPS = 4  # tiny iterator budget keeps these loop tests fast


@pytest.fixture(scope="module")
def gen():
    return build_generator(1)


@pytest.fixture(scope="module")
def phi():
    return build_phi(2)


@pytest.fixture(scope="module")
def corpus(gen):
    return gen_corpus(gen, 12, 11)


def tiny_config(**kw):
    base = dict(epochs=2, batch_size=4, iterator_steps=STEPS, seed=7)
    base.update(kw)
    return TrainConfig(**base)


class TestConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            TrainConfig(lambda2=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(iterator_steps=0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(mode="both")

    def test_iter_config_inherits_knobs(self):
        cfg = TrainConfig(iter_lr=0.02, alpha=0.5, iterator_steps=7)
        ic = cfg.iter_config()
        assert ic.steps == 7 and ic.lr == 0.02 and ic.alpha == 0.5
        assert cfg.iter_config(steps=3).steps == 3


class TestCache:
    def test_strictly_better_candidates_accepted(self, gen, phi, corpus):
        s = corpus.train[0]
        cache = SupervisionCache()
        far = np.zeros((8, 64), np.float32)
        assert update_cache(cache, s.sample_id, far, s.image, gen, phi)
        # the oracle latent has loss ~0 and must displace the zero code
        assert update_cache(cache, s.sample_id, s.oracle_latent, s.image, gen, phi)
        assert cache.best_latent(s.sample_id).tobytes() == \
            np.asarray(s.oracle_latent, np.float32).tobytes()

    def test_worse_candidate_rejected(self, gen, phi, corpus):
        s = corpus.train[0]
        cache = SupervisionCache()
        update_cache(cache, s.sample_id, s.oracle_latent, s.image, gen, phi)
        assert not update_cache(cache, s.sample_id, np.zeros((8, 64), np.float32),
                                s.image, gen, phi)

    def test_equal_candidate_rejected(self, gen, phi, corpus):
        s = corpus.train[0]
        cache = SupervisionCache()
        update_cache(cache, s.sample_id, s.oracle_latent, s.image, gen, phi)
        assert not update_cache(cache, s.sample_id, s.oracle_latent, s.image,
                                gen, phi)

    def test_non_finite_candidate_rejected(self, gen, phi, corpus):
        s = corpus.train[0]
        cache = SupervisionCache()
        bad = np.full((8, 64), np.inf, np.float32)
        assert not update_cache(cache, s.sample_id, bad, s.image, gen, phi)
        assert s.sample_id not in cache

    def test_history_is_strictly_decreasing(self, gen, phi, corpus):
        s = corpus.train[0]
        cache = SupervisionCache()
        rng = np.random.default_rng(0)
        for _ in range(6):
            cand = s.oracle_latent + rng.standard_normal((8, 64)).astype(np.float32)
            update_cache(cache, s.sample_id, cand, s.image, gen, phi)
        seq = cache.history[s.sample_id]
        assert all(b < a for a, b in zip(seq, seq[1:]))

    def test_save_load_equals(self, gen, phi, corpus, tmp_path):
        cache = SupervisionCache()
        for s in corpus.train[:3]:
            update_cache(cache, s.sample_id, s.oracle_latent, s.image, gen, phi)
        p = tmp_path / "c.cache"
        cache.save(p)
        assert SupervisionCache.load(p).equals(cache)

    def test_equals_detects_difference(self, gen, phi, corpus):
        a, b = SupervisionCache(), SupervisionCache()
        s = corpus.train[0]
        update_cache(a, s.sample_id, s.oracle_latent, s.image, gen, phi)
        assert not a.equals(b)
        update_cache(b, s.sample_id, s.oracle_latent, s.image, gen, phi)
        assert a.equals(b)


class TestLosses:
    def test_zero_at_identical_latents(self, gen, phi, corpus):
        w = corpus.train[0].oracle_latent
        lw, lmse, lper = compute_losses(gen, phi, w, w)
        assert lw == 0.0 and lmse == 0.0 and lper == 0.0

    def test_latent_term_is_mean_square(self, gen, phi, corpus):
        w = np.asarray(corpus.train[0].oracle_latent, np.float32)
        w2 = w + 0.5
        lw, _, _ = compute_losses(gen, phi, w, w2)
        assert abs(lw - 0.25) < 1e-6

    def test_image_terms_match_direct_evaluation(self, gen, phi, corpus):
        w1 = np.asarray(corpus.train[0].oracle_latent, np.float32)
        w2 = np.asarray(corpus.train[1].oracle_latent, np.float32)
        _, lmse, lper = compute_losses(gen, phi, w1, w2)
        x1, x2 = synthesize(gen, w1), synthesize(gen, w2)
        assert abs(lmse - float(np.mean((x1 - x2) ** 2))) < 1e-6
        assert abs(lper - float(distance(phi, x1, x2))) < 1e-5

    def test_inversion_loss_zero_at_oracle(self, gen, phi, corpus):
        s = corpus.train[0]
        assert inversion_loss(gen, phi, s.oracle_latent, s.image) <= 1e-6


class TestTrainLoop:
    def test_full_mode_trains_and_reports(self, gen, phi, corpus):
        emb, cache, report = train(corpus, gen, phi, init_embednet(3),
                                   tiny_config())
        assert emb.trained_epochs == 2
        assert len(cache) == len(corpus.train)
        assert report.encoder_updates == 2 * 3  # 12 samples, 9 train, batch 4
        assert report.iterator_steps_spent == 2 * len(corpus.train) * STEPS
        assert len(report.epochs) == 2
        for sid, seq in cache.history.items():
            assert all(b < a for a, b in zip(seq, seq[1:]))

    def test_same_seed_same_run(self, gen, phi, corpus):
        r1 = train(corpus, gen, phi, init_embednet(3), tiny_config())
        r2 = train(corpus, gen, phi, init_embednet(3), tiny_config())
        for (n1, a1), (n2, a2) in zip(r1[0].arrays(), r2[0].arrays()):
            assert n1 == n2 and a1.tobytes() == a2.tobytes()
        assert r1[1].equals(r2[1])

    def test_thread_count_cache_identical(self, gen, phi, corpus):
        r1 = train(corpus, gen, phi, init_embednet(3), tiny_config(threads=1))
        r2 = train(corpus, gen, phi, init_embednet(3), tiny_config(threads=2))
        assert r1[1].equals(r2[1])
        for (_, a1), (_, a2) in zip(r1[0].arrays(), r2[0].arrays()):
            assert a1.tobytes() == a2.tobytes()

    def test_no_iterator_mode_spends_no_iterator_steps(self, gen, phi, corpus):
        emb, cache, report = train(corpus, gen, phi, init_embednet(3),
                                   tiny_config(mode="no_iterator"))
        assert report.iterator_steps_spent == 0
        assert len(cache) == 0
        assert all(r.l_w == 0.0 for r in report.batches)

    def test_single_encoder_mode_runs(self, gen, phi, corpus):
        emb, cache, report = train(corpus, gen, phi, init_single_embednet(3),
                                   tiny_config(mode="single_encoder"))
        assert emb.kind == "single_branch"
        assert len(cache) == len(corpus.train)

    def test_offline_mode_precomputes_static_cache(self, gen, phi, corpus):
        emb, cache, report = train(corpus, gen, phi, init_embednet(3),
                                   tiny_config(mode="offline"))
        assert len(cache) == len(corpus.train)
        # one candidate per sample: precompute fills it, the loop never adds
        assert all(len(seq) == 1 for seq in cache.history.values())

    def test_holdout_metrics_chunking_invariant(self, gen, phi, corpus):
        emb = init_embednet(3)
        a = holdout_metrics(gen, phi, emb, corpus.test, chunk=1)
        b = holdout_metrics(gen, phi, emb, corpus.test, chunk=32)
        assert abs(a[0] - b[0]) < 1e-6 and abs(a[1] - b[1]) < 1e-6

    def test_empty_train_split_rejected(self, gen, phi, corpus):
        empty = type(corpus)([], [], [], 0)
        with pytest.raises(ValueError):
            train(empty, gen, phi, init_embednet(3), tiny_config())


class TestCheckpointing:
    def test_round_trip_restores_everything(self, gen, phi, corpus, tmp_path):
        emb, cache, report = train(corpus, gen, phi, init_embednet(3),
                                   tiny_config(), out_dir=str(tmp_path))
        path, epoch = latest_checkpoint(str(tmp_path))
        assert epoch == 2
        g2, p2, e2, adam_state, ep = load_checkpoint(path)
        assert ep == 2 and e2.trained_epochs == 2
        for (n1, a1), (n2, a2) in zip(emb.arrays(), e2.arrays()):
            assert n1 == n2 and a1.tobytes() == a2.tobytes()
        assert adam_state and all(st["t"] > 0 for st in adam_state.values())

    def test_tampered_generator_detected(self, gen, phi, corpus, tmp_path):
        from styleinv.fileio import FileFormatError, read_ckpt, write_ckpt
        p = tmp_path / "m.ckpt"
        save_checkpoint(str(p), gen, phi, init_embednet(3), {}, 0, tiny_config())
        table = read_ckpt(p)
        name = next(k for k in table if k.startswith("gen/"))
        table[name] = table[name] + 1.0
        write_ckpt(p, table)
        with pytest.raises(FileFormatError, match="generator"):
            load_checkpoint(str(p))

    def test_resume_reproduces_uninterrupted_run(self, gen, phi, corpus, tmp_path):
        cfg = tiny_config(epochs=2)
        full_dir = tmp_path / "full"
        emb_full, cache_full, _ = train(corpus, gen, phi, init_embednet(3),
                                        cfg, out_dir=str(full_dir))

        # run one epoch, then resume for the second
        part_dir = tmp_path / "part"
        train(corpus, gen, phi, init_embednet(3), tiny_config(epochs=1),
              out_dir=str(part_dir))
        emb_res, cache_res, _ = train(corpus, gen, phi, init_embednet(3), cfg,
                                      out_dir=str(part_dir), resume=True)

        for (n1, a1), (n2, a2) in zip(emb_full.arrays(), emb_res.arrays()):
            assert n1 == n2 and a1.tobytes() == a2.tobytes()
        assert cache_full.equals(cache_res)

    def test_latest_checkpoint_empty_dir(self, tmp_path):
        assert latest_checkpoint(str(tmp_path)) == (None, 0)


class TestSupervisionHook:
    def test_targets_come_from_cache(self, gen, phi, corpus):
        from styleinv.trainer import TrainHooks
        seen = []

        def grab(sids, targets, cache):
            seen.append((list(sids), targets.copy(),
                         {sid: cache.best_latent(sid).copy() for sid in sids
                          if sid in cache}))

        train(corpus, gen, phi, init_embednet(3), tiny_config(epochs=1),
              hooks=TrainHooks(on_supervision=grab))
        assert seen
        for sids, targets, best in seen:
            for i, sid in enumerate(sids):
                assert sid in best
                np.testing.assert_array_equal(targets[i], best[sid])

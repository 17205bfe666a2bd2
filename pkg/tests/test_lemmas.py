from types import SimpleNamespace

from pulsesync.lemmas import (lemma_consistent_init, lemma_grouping, lemma_input_wait, lemma_repetition,
                              lemma_resync_spacing, lemma_separation, main_lemmas)
from pulsesync.timebase import q

MT = SimpleNamespace(theta=q(1), d=q(1), T1=q(3), T_listen=q(3), T2=q(100), T_active=q(10 ** 4), tau=q(20))
RT = SimpleNamespace(theta=q(1), d=q(1), T_vote=q(4), T_cool=q(1000), T_star=q(0), rho=q(4), Psi=q(30),
                     beta=q(40), lam_minus=(q(150), q(190)), lam_plus=(q(170), q(210)))
CORRECT = [0, 1, 2]
END = (q(10 ** 5), 0, "end", "", "")


def tr(t, v, scope, src, dst):
    return (q(t), v, "tr", scope, f"{src}>{dst}")


def test_input_wait():
    base = [tr(50, 0, "mp.main", "PULSE", "WAIT"), tr(52, 0, "mp.aux", "READ", "INPUT1"), END]
    bad = lemma_input_wait(base, CORRECT, MT, "mp", [0], f=1)
    assert not bad.ok and bad.t == 52
    ok = lemma_input_wait(base + [tr(51, 1, "mp.main", "PULSE", "WAIT")], CORRECT, MT, "mp", [0], f=1)
    assert ok.ok and "1 INPUT1" in ok.detail


def test_input_wait_ignores_early_entries():
    rec = [tr(2, 0, "mp.aux", "READ", "INPUT1"), END]
    assert lemma_input_wait(rec, CORRECT, MT, "mp", [0], f=1).ok


def test_separation():
    # window after a WAIT at 10: [10 + 9 + 1, 10 + 100 - 6 - 1) = [20, 103)
    rec = [tr(10, 0, "mp.main", "PULSE", "WAIT"), tr(60, 1, "mp.main", "PULSE", "WAIT"), END]
    c = lemma_separation(rec, CORRECT, MT, "mp", [0])
    assert not c.ok and c.t == 60
    rec = [tr(10, 0, "mp.main", "PULSE", "WAIT"), tr(12, 1, "mp.main", "PULSE", "WAIT"),
           tr(110, 1, "mp.main", "PULSE", "WAIT"), END]
    assert lemma_separation(rec, CORRECT, MT, "mp", [0]).ok


def test_consistent_init():
    # INPUT1 at 50: t0 = 50 - 3 - 1 + 100 = 146, window [146, 166)
    rec = [tr(50, 0, "mp.aux", "READ", "INPUT1")]
    rec += [tr(150, v, "mp.aux", "INPUT1", "RUN1") for v in (0, 1)]
    c = lemma_consistent_init(rec + [END], CORRECT, MT, "mp", [0])
    assert not c.ok and "[2]" in c.detail
    rec.append(tr(165, 2, "mp.aux", "INPUT0", "RUN0"))
    assert lemma_consistent_init(rec + [END], CORRECT, MT, "mp", [0]).ok


def test_main_lemmas_void_without_resync():
    assert all(c.ok and "void" in c.detail for c in main_lemmas([END], CORRECT, MT, "mp", [], 1))


def test_resync_spacing():
    sc = "rs.validator0"
    ok = [tr(0, 0, sc, "WAIT", "RESYNC"), tr(160, 0, sc, "WAIT", "RESYNC"), tr(2000, 0, sc, "WAIT", "RESYNC")]
    assert lemma_resync_spacing(ok + [END], CORRECT, RT, "rs").ok
    bad = ok + [tr(2100, 0, sc, "WAIT", "RESYNC")]
    c = lemma_resync_spacing(bad + [END], CORRECT, RT, "rs")
    assert not c.ok and c.t == 2100


def test_grouping():
    sc = "rs.validator1"
    lone = [tr(100, 0, sc, "WAIT", "RESYNC"), END]
    assert not lemma_grouping(lone, CORRECT, RT, "rs").ok
    grouped = [tr(100, 0, sc, "WAIT", "RESYNC"), tr(103, 1, sc, "WAIT", "RESYNC"), tr(98, 2, sc, "HOLD", "IGNORE"),
               END]
    assert lemma_grouping(grouped, CORRECT, RT, "rs").ok


def test_repetition_detects_off_schedule_index():
    sc = "rs.validator0"
    rec = []
    for i, t in enumerate((100, 260, 420)):
        rec += [tr(t + v, v, sc, "WAIT", "RESYNC") for v in CORRECT]
    good = lemma_repetition(rec + [END], CORRECT, RT, "rs", 0)
    assert good[0].ok
    rec.append(tr(480, 2, sc, "WAIT", "RESYNC"))   # index 3 of node 2 arrives far too early
    bad = lemma_repetition(rec + [END], CORRECT, RT, "rs", 0)
    assert not bad[0].ok


def test_repetition_premises():
    assert all(c.ok for c in lemma_repetition([END], CORRECT, RT, "rs", []))
    assert all(c.ok for c in lemma_repetition([END], CORRECT, RT, "rs", 0, require_group=False))
    assert not any(c.ok for c in lemma_repetition([END], CORRECT, RT, "rs", 0))

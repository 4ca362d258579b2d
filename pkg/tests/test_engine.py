"""Quorum arithmetic, redundant-creator resolution, and block validation."""
import dataclasses

import pytest

from portchain.core import (
    Vote,
    VoteCertificate,
    block_digest,
    build_certificate,
    vote_signing_bytes,
)
from portchain.crypto import digest, sign
from portchain.engine import (
    BlockExecutor,
    assemble_block,
    commit_rule,
    equivocation_evidence,
    quorum_threshold,
    rehash_value,
    resolve_redundant,
)
from portchain.netsim import SimConfig, build_context
from portchain.selection import NoCandidatesError

from conftest import make_keys


def test_quorum_threshold_values():
    assert quorum_threshold(300) == 200
    assert quorum_threshold(3) == 2
    assert quorum_threshold(4) == 3
    assert quorum_threshold(6) == 4
    assert quorum_threshold(1) == 1
    # always the least integer at or above two thirds
    for n in range(1, 200):
        q = quorum_threshold(n)
        assert 3 * q >= 2 * n > 3 * (q - 1)


def _cert_over(pairs, target, count):
    votes = []
    for addr, kp in pairs[:count]:
        sig = sign(kp, vote_signing_bytes(target, True))
        votes.append(Vote(addr, target, True, sig))
    return build_certificate(votes)


def test_commit_rule_exact_boundary():
    pairs = make_keys(30)
    pubkeys = {a: k.public for a, k in pairs}
    voters = [a for a, _ in pairs]
    target = digest(b"boundary")
    q = quorum_threshold(30)
    assert commit_rule(_cert_over(pairs, target, q), voters, pubkeys)
    assert not commit_rule(_cert_over(pairs, target, q - 1), voters, pubkeys)


def test_commit_rule_small_committee():
    pairs = make_keys(3)
    pubkeys = {a: k.public for a, k in pairs}
    voters = [a for a, _ in pairs]
    target = digest(b"t")
    assert commit_rule(_cert_over(pairs, target, 2), voters, pubkeys)
    assert not commit_rule(_cert_over(pairs, target, 1), voters, pubkeys)


def test_commit_rule_rejects_duplicate_voter():
    pairs = make_keys(3)
    pubkeys = {a: k.public for a, k in pairs}
    voters = [a for a, _ in pairs]
    target = digest(b"t")
    addr, kp = pairs[0]
    v = Vote(addr, target, True, sign(kp, vote_signing_bytes(target, True)))
    padded = VoteCertificate(target_hash=target, votes=(v, v))
    assert not commit_rule(padded, voters, pubkeys)


def test_commit_rule_monotone_in_votes():
    pairs = make_keys(9)
    pubkeys = {a: k.public for a, k in pairs}
    voters = [a for a, _ in pairs]
    target = digest(b"mono")
    prev = False
    for count in range(1, 10):
        now = commit_rule(_cert_over(pairs, target, count), voters, pubkeys)
        assert now >= prev
        prev = now
    assert prev


def _fake_block(tag: bytes):
    from portchain.core import Block, BlockHeader, EMPTY_CERTIFICATE, MaintainerAssignment

    header = BlockHeader(
        height=3,
        prev_hash=digest(tag),
        creator=tag.ljust(20, b"\x00")[:20],
        creator_index=0,
        state_root=digest(b"s" + tag),
        tx_root=digest(b"x" + tag),
        prev_certificate=EMPTY_CERTIFICATE,
        timestamp=1,
        assignment_digest=digest(b"a" + tag),
    )
    return Block(header, (), MaintainerAssignment(5, (), ()), ())


def test_resolve_redundant_matches_oracle():
    blocks = [_fake_block(bytes([i])) for i in range(12)]
    # independent restatement of the rule: max re-hash, tie to smaller digest
    def oracle(cands):
        best = None
        for b in cands:
            d = block_digest(b.header)
            r = int.from_bytes(digest(b"rehash" + d), "big")
            if best is None or (r, [-x for x in d]) > (best[0], [-x for x in best[1]]):
                best = (r, d, b)
        return best[2]

    for size in (1, 2, 5, 12):
        cands = blocks[:size]
        assert resolve_redundant(cands) == oracle(cands)
        assert resolve_redundant(list(reversed(cands))) == oracle(cands)
    with pytest.raises(NoCandidatesError):
        resolve_redundant([])


def test_rehash_value_stable():
    d = digest(b"block")
    assert rehash_value(d) == int.from_bytes(digest(b"rehash" + d), "big")


def test_equivocation_evidence_order_independent():
    d1, d2 = digest(b"one"), digest(b"two")
    e = equivocation_evidence(4, b"\x01" * 20, [d1, d2])
    assert e == equivocation_evidence(4, b"\x01" * 20, [d2, d1])
    assert e != equivocation_evidence(5, b"\x01" * 20, [d1, d2])


# --- block assembly and validation -----------------------------------------


def _context():
    return build_context(SimConfig(seed=11, node_count=18, voter_count=3, creator_redundancy=2))


def _block_one(ctx, timestamp=5):
    a1 = ctx.genesis_assignments[1]
    key_of = dict(zip(ctx.addresses, ctx.keys))
    gdigest = block_digest(ctx.genesis_block.header)
    votes = [
        Vote(v, gdigest, True, sign(key_of[v], vote_signing_bytes(gdigest, True)))
        for v in a1.voters
    ]
    cert = build_certificate(votes)
    current = [(a, i) for i, a in enumerate(a1.members())]
    return assemble_block(
        ctx.engine_cfg,
        1,
        ctx.genesis_block,
        gdigest,
        cert,
        a1.creators[0],
        0,
        timestamp,
        current,
        (),
        ctx.genesis_trie,
        txs=(),
    )


def test_assemble_block_links_and_assignment():
    ctx = _context()
    built = _block_one(ctx)
    blk = built.block
    assert blk.header.height == 1
    assert blk.header.prev_hash == block_digest(ctx.genesis_block.header)
    assert blk.assignment.block_height == 3
    members = blk.assignment.members()
    assert len(set(members)) == len(members)
    # nobody serving at heights 1 or 2 is allowed to serve height 3
    busy = set(ctx.genesis_assignments[1].members())
    busy |= set(ctx.genesis_assignments[2].members())
    assert not set(members) & busy
    assert blk.header.state_root == built.post_trie.root_commitment()


def test_executor_accepts_honest_block():
    ctx = _context()
    built = _block_one(ctx)
    ex = BlockExecutor(ctx.engine_cfg)
    result = ex.validate(
        built.block, ctx.genesis_block, ctx.genesis_trie, ctx.genesis_assignments[1], ()
    )
    assert result.valid, result.reason
    assert result.post_trie.root_commitment() == built.block.header.state_root


def test_executor_rejects_tampering():
    ctx = _context()
    built = _block_one(ctx)
    ex = BlockExecutor(ctx.engine_cfg)
    sched = ctx.genesis_assignments[1]
    good = built.block

    def check(blk, expect_reason=None):
        r = ex.validate(blk, ctx.genesis_block, ctx.genesis_trie, sched, ())
        assert not r.valid
        if expect_reason:
            assert expect_reason in r.reason

    # wrong creator slot
    check(
        dataclasses.replace(
            good, header=dataclasses.replace(good.header, creator_index=1)
        ),
        "creator not assigned",
    )
    check(
        dataclasses.replace(
            good, header=dataclasses.replace(good.header, creator_index=9)
        ),
        "creator index",
    )
    # broken backward link
    check(
        dataclasses.replace(
            good, header=dataclasses.replace(good.header, prev_hash=digest(b"no"))
        ),
        "backward link",
    )
    # doctored state root
    check(
        dataclasses.replace(
            good, header=dataclasses.replace(good.header, state_root=digest(b"no"))
        ),
        "recomputed header mismatch",
    )
    # swapped forward assignment
    fake_asg = dataclasses.replace(
        good.assignment, voters=tuple(reversed(good.assignment.voters))
    )
    check(dataclasses.replace(good, assignment=fake_asg))
    # insufficient certificate
    thin = VoteCertificate(
        target_hash=good.header.prev_certificate.target_hash,
        votes=good.header.prev_certificate.votes[:1],
    )
    check(
        dataclasses.replace(
            good, header=dataclasses.replace(good.header, prev_certificate=thin)
        ),
        "2/3 rule",
    )


def test_executor_timestamp_changes_digest_only():
    ctx = _context()
    b1 = _block_one(ctx, timestamp=5).block
    b2 = _block_one(ctx, timestamp=6).block
    assert block_digest(b1.header) != block_digest(b2.header)
    assert b1.header.state_root == b2.header.state_root
    assert b1.assignment == b2.assignment

use super::*;
use crate::crypto::reconstruct;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn setup(n: usize, f: usize, seed: &[u8]) -> Vec<Enclave> {
    trusted_setup(n, f, CryptoSuite::Sim, &mut Prg::new(seed)).0
}

fn propose(e: &mut Enclave, x: &[u8]) -> (SignedCounter, SecretEnvelope) {
    let env = e.generate_secret(e.current()).unwrap();
    let sc = e.create_counter(hash(x));
    (sc, env)
}

fn vote(e: &mut Enclave, p: &(SignedCounter, SecretEnvelope)) -> Result<VoteShare, EnclaveError> {
    let ct = p.1.share_for(e.id()).unwrap().clone();
    e.verify_counter(&p.0, &ct)
}

/// Index of the view-0 leader and the two followers, for n = 3.
fn roles(es: &[Enclave]) -> (usize, usize, usize) {
    let l = es[0].leader() as usize;
    let others: Vec<usize> = (0..3).filter(|&i| i != l).collect();
    (l, others[0], others[1])
}

#[test]
fn create_counter_is_consecutive() {
    let mut es = setup(3, 1, b"create");
    let e = &mut es[0];
    let first = e.create_counter(hash(b"M"));
    assert_eq!(first.counter, CounterValue::new(0, 0));
    assert_eq!(e.counter(), 1);
    let second = e.create_counter(hash(b"M2"));
    assert_eq!(second.counter, CounterValue::new(1, 0));
    let rest: Vec<_> = (0..98u32).map(|i| e.create_counter(hash(&i.to_be_bytes()))).collect();
    for (i, sc) in rest.iter().enumerate() {
        assert_eq!(sc.counter.counter, i as u64 + 2);
        assert!(sc.verify(e.directory()));
    }
}

#[test]
fn generate_secret_shares_reconstruct_to_commitment() {
    let mut es = setup(3, 1, b"gen");
    let (l, a, b) = roles(&es);
    let p = propose(&mut es[l], b"req");
    assert_eq!(p.1.commitment.counter, CounterValue::new(0, 0));
    let sa = vote(&mut es[a], &p).unwrap();
    let sb = vote(&mut es[b], &p).unwrap();
    let s = reconstruct(&[sa.share, sb.share], 1).unwrap();
    assert_eq!(Secret(s).digest(), p.1.commitment.secret_digest);
    assert!(p.1.commitment.opens_with(es[l].directory(), &Secret(s)));
}

#[test]
fn secrets_are_fresh_per_counter() {
    let mut es = setup(3, 1, b"fresh");
    let mut seen = std::collections::HashSet::new();
    for _ in 0..200 {
        let at = es[0].current();
        let env = es[0].generate_secret(at).unwrap();
        es[0].create_counter(hash(b"x"));
        assert!(seen.insert(env.commitment.secret_digest));
    }
}

#[test]
fn generate_secret_rejects_future_binding() {
    let mut es = setup(3, 1, b"stale");
    let cur = es[0].current();
    let err = es[0].generate_secret(CounterValue::new(cur.counter + 5, cur.view)).unwrap_err();
    assert!(matches!(err, EnclaveError::StaleBinding { .. }));
}

#[test]
fn verify_counter_accepts_then_refuses_replay_and_gaps() {
    let mut es = setup(3, 1, b"verify");
    let (l, a, _) = roles(&es);
    let p0 = propose(&mut es[l], b"r0");
    vote(&mut es[a], &p0).unwrap();
    assert_eq!(es[a].last_validated(), Some(CounterValue::new(0, 0)));
    assert_eq!(es[a].counter(), 1);
    assert!(matches!(vote(&mut es[a], &p0), Err(EnclaveError::InvalidCounter { .. })));

    let _p1 = propose(&mut es[l], b"r1");
    let p2 = propose(&mut es[l], b"r2");
    assert!(matches!(vote(&mut es[a], &p2), Err(EnclaveError::InvalidCounter { .. })));
    assert_eq!(es[a].last_validated(), Some(CounterValue::new(0, 0)));
}

#[test]
fn verify_counter_rejects_tampering_and_non_leaders() {
    let mut es = setup(3, 1, b"tamper");
    let (l, a, b) = roles(&es);
    let p = propose(&mut es[l], b"r0");

    let mut forged = p.0.clone();
    forged.payload = hash(b"other");
    let ct = p.1.share_for(a as u32).unwrap().clone();
    assert!(matches!(es[a].verify_counter(&forged, &ct), Err(EnclaveError::InvalidMessage(_))));

    let mut bad_ct = ct.clone();
    bad_ct.payload[0] ^= 1;
    assert!(matches!(es[a].verify_counter(&p.0, &bad_ct), Err(EnclaveError::InvalidMessage(_))));

    // a share meant for b
    let ct_b = p.1.share_for(b as u32).unwrap().clone();
    assert!(es[a].verify_counter(&p.0, &ct_b).is_err());

    // a follower's enclave can sign, but its proposals are not votable
    let fake = propose(&mut es[b], b"fake");
    assert!(vote(&mut es[a], &fake).is_err());
    // nothing was released on any failure path
    assert_eq!(es[a].last_validated(), None);
    assert!(vote(&mut es[a], &p).is_ok());
}

#[test]
fn leader_votes_once_on_its_own_proposal() {
    let mut es = setup(3, 1, b"own");
    let (l, _, _) = roles(&es);
    let p = propose(&mut es[l], b"r0");
    assert_eq!(es[l].last_validated(), Some(CounterValue::new(0, 0)));
    assert!(vote(&mut es[l], &p).is_ok());
    assert!(vote(&mut es[l], &p).is_err());
}

#[test]
fn highest_message_proof_locks_voting() {
    let mut es = setup(3, 1, b"proof");
    let (l, a, _) = roles(&es);
    let p0 = propose(&mut es[l], b"r0");
    let p1 = propose(&mut es[l], b"r1");
    vote(&mut es[a], &p0).unwrap();
    vote(&mut es[a], &p1).unwrap();

    assert!(matches!(
        es[a].get_highest_message(Some(&p0.0)),
        Err(EnclaveError::NotLatestVote { .. })
    ));
    let proof = es[a].get_highest_message(Some(&p1.0)).unwrap();
    assert_eq!(proof.proof_counter, CounterValue::new(2, 0));
    assert!(proof.counter_rule_holds());
    assert!(es[a].is_locked());

    let p2 = propose(&mut es[l], b"r2");
    assert_eq!(vote(&mut es[a], &p2), Err(EnclaveError::VotingLocked(0)));

    let again = es[a].get_highest_message(Some(&p1.0)).unwrap();
    assert_eq!(again.proof_counter, CounterValue::new(3, 0));
    // against the same log [p0, p1] only the first proof satisfies rule 2
    let accepted = [&proof, &again].iter().filter(|p| p.counter_rule_holds()).count();
    assert_eq!(accepted, 1);
}

#[test]
fn empty_log_proof_is_at_counter_zero() {
    let mut es = setup(3, 1, b"empty");
    let proof = es[1].get_highest_message(None).unwrap();
    assert_eq!(proof.proof_counter, CounterValue::new(0, 0));
    assert!(proof.counter_rule_holds());
    assert!(proof.verify(es[1].directory()));
}

/// Drives all n = 3 enclaves through a view change whose highest voted
/// proposal is at counter `top` (the leader and one follower vote 0..=top,
/// the other follower only 0..=1). Returns the anchor and new-view cert.
fn view_change(es: &mut [Enclave], top: u64) -> (HistoryAnchor, NewViewCert) {
    let v = es[0].view();
    let (l, a, b) = {
        let l = es[0].leader() as usize;
        let o: Vec<usize> = (0..3).filter(|&i| i != l).collect();
        (l, o[0], o[1])
    };
    let base = es[l].counter();
    assert_eq!(base, 0);
    let mut props = Vec::new();
    for i in 0..=top {
        let p = propose(&mut es[l], &i.to_be_bytes());
        vote(&mut es[a], &p).unwrap();
        if i <= 1 {
            vote(&mut es[b], &p).unwrap();
        }
        props.push(p);
    }
    let target = v + 1;
    let next = es[0].leader_of(target) as usize;
    let mut proofs = Vec::new();
    for e in es.iter_mut() {
        let h = e.last_validated().map(|lv| props[lv.counter as usize].0.clone());
        proofs.push(e.get_highest_message(h.as_ref()).unwrap());
    }
    let anchor = es[next].merge_highest_messages(target, &proofs).unwrap();
    let at = es[next].current();
    let nv_env = es[next].generate_secret(at).unwrap();
    let nv = es[next].create_counter(hash(b"view-change"));
    let p = (nv, nv_env);
    let mut shares = vec![vote(&mut es[next], &p).unwrap().share];
    for i in 0..3 {
        if i == next {
            continue;
        }
        es[i].sync_with_highest(&anchor).unwrap();
        shares.push(vote(&mut es[i], &p).unwrap().share);
    }
    let secret = Secret(reconstruct(&shares[..2], 1).unwrap());
    let cert = NewViewCert {
        commitment: p.1.commitment.clone(),
        secret,
    };
    (anchor, cert)
}

#[test]
fn merge_selects_highest_valid_proof() {
    let mut es = setup(3, 1, b"merge");
    let (l, a, b) = roles(&es);
    let mut props = Vec::new();
    for i in 0..6u64 {
        let p = propose(&mut es[l], &i.to_be_bytes());
        vote(&mut es[a], &p).unwrap();
        if i <= 3 {
            vote(&mut es[b], &p).unwrap();
        }
        props.push(p);
    }
    let pa = es[a].get_highest_message(Some(&props[5].0)).unwrap();
    let pb = es[b].get_highest_message(Some(&props[3].0)).unwrap();
    let next = es[0].leader_of(1) as usize;

    let mut forged = pa.clone();
    forged.sig = forged.sig.with_bit_flipped(3);
    assert_eq!(
        es[next].merge_highest_messages(1, &[forged, pb.clone()]),
        Err(EnclaveError::InsufficientQuorum { valid: 1, needed: 2 })
    );
    // duplicates of one issuer count once
    assert!(es[next].merge_highest_messages(1, &[pb.clone(), pb.clone()]).is_err());

    let anchor = es[next].merge_highest_messages(1, &[pb, pa]).unwrap();
    assert_eq!(anchor.highest.unwrap().counter, CounterValue::new(5, 0));
}

#[test]
fn merge_mixed_heights_and_unanimous() {
    let mut es = setup(3, 1, b"merge2");
    let (l, a, b) = roles(&es);
    let mut props = Vec::new();
    for i in 0..6u64 {
        let p = propose(&mut es[l], &i.to_be_bytes());
        vote(&mut es[a], &p).unwrap();
        vote(&mut es[b], &p).unwrap();
        props.push(p);
    }
    let proofs: Vec<_> = [l, a, b]
        .iter()
        .map(|&i| es[i].get_highest_message(Some(&props[5].0)).unwrap())
        .collect();
    let next = es[0].leader_of(1) as usize;
    let anchor = es[next].merge_highest_messages(1, &proofs[..2]).unwrap();
    assert_eq!(anchor.highest.as_ref().unwrap().counter, CounterValue::new(5, 0));
    assert_eq!(anchor.highest.unwrap().payload, hash(&5u64.to_be_bytes()));
}

#[test]
fn merge_refuses_non_leaders() {
    let mut es = setup(3, 1, b"merge3");
    let next = es[0].leader_of(1);
    let not_next = (next + 1) % 3;
    let proofs: Vec<_> = es.iter_mut().map(|e| e.get_highest_message(None).unwrap()).collect();
    assert!(matches!(
        es[not_next as usize].merge_highest_messages(1, &proofs),
        Err(EnclaveError::NotNextLeader { .. })
    ));
    let anchor = es[next as usize].merge_highest_messages(1, &proofs).unwrap();
    assert!(anchor.highest.is_none());
    assert_eq!(anchor.next_counter(), 0);
}

#[test]
fn sync_moves_locked_replica_to_anchor() {
    let mut es = setup(3, 1, b"sync");
    let (l, a, b) = roles(&es);
    let mut props = Vec::new();
    for i in 0..6u64 {
        let p = propose(&mut es[l], &i.to_be_bytes());
        vote(&mut es[a], &p).unwrap();
        if i <= 1 {
            vote(&mut es[b], &p).unwrap();
        }
        props.push(p);
    }
    let pb = es[b].get_highest_message(Some(&props[1].0)).unwrap();
    assert_eq!(pb.proof_counter, CounterValue::new(2, 0));
    let pa = es[a].get_highest_message(Some(&props[5].0)).unwrap();
    let pl = es[l].get_highest_message(Some(&props[5].0)).unwrap();
    let next = es[0].leader_of(1) as usize;
    let anchor = es[next].merge_highest_messages(1, &[pa, pb, pl]).unwrap();

    if next != b {
        let before = (es[b].counter(), es[b].last_validated());
        for bit in 0..64 {
            let mut t = anchor.clone();
            t.sig = t.sig.with_bit_flipped(bit * 7);
            assert!(matches!(es[b].sync_with_highest(&t), Err(EnclaveError::InvalidMessage(_))));
        }
        let mut t = anchor.clone();
        t.target_view = 2;
        assert!(es[b].sync_with_highest(&t).is_err());
        assert_eq!((es[b].counter(), es[b].last_validated()), before);

        es[b].sync_with_highest(&anchor).unwrap();
    }
    assert_eq!(es[b].last_validated(), Some(CounterValue::new(5, 0)));
    assert_eq!(es[b].counter(), 6);
    assert!(!es[b].is_locked());

    // replica already at (5,0): order unchanged
    if next != a {
        es[a].sync_with_highest(&anchor).unwrap();
        assert_eq!(es[a].last_validated(), Some(CounterValue::new(5, 0)));
        assert_eq!(es[a].counter(), 6);
    }
}

#[test]
fn sync_never_reopens_a_used_counter() {
    let mut es = setup(5, 2, b"reopen");
    let l = es[0].leader() as usize;
    let f: Vec<usize> = (0..5).filter(|&i| i != l).collect();
    let mut props = Vec::new();
    for i in 0..4u64 {
        let p = propose(&mut es[l], &i.to_be_bytes());
        // f[0], f[1] vote to 1, f[2] only 0, f[3] to 3
        if i <= 1 {
            vote(&mut es[f[0]], &p).unwrap();
            vote(&mut es[f[1]], &p).unwrap();
        }
        if i == 0 {
            vote(&mut es[f[2]], &p).unwrap();
        }
        vote(&mut es[f[3]], &p).unwrap();
        props.push(p);
    }
    let proofs: Vec<_> = f[..3]
        .iter()
        .map(|&i| {
            let h = props[es[i].last_validated().unwrap().counter as usize].0.clone();
            es[i].get_highest_message(Some(&h)).unwrap()
        })
        .collect();
    let next = es[0].leader_of(1) as usize;
    let high_voter = f[3];
    match es[next].merge_highest_messages(1, &proofs) {
        Ok(anchor) => {
            assert_eq!(anchor.highest.as_ref().unwrap().counter, CounterValue::new(1, 0));
            assert!(next != l && next != high_voter);
            let before = es[high_voter].current();
            assert!(matches!(
                es[high_voter].sync_with_highest(&anchor),
                Err(EnclaveError::StaleAnchor { reopened: 2, .. })
            ));
            assert_eq!(es[high_voter].current(), before);
        }
        Err(e) => {
            assert!(next == l || next == high_voter);
            assert!(matches!(e, EnclaveError::StaleAnchor { .. }));
        }
    }
}

#[test]
fn update_view_resets_counters_and_rejects_old_proposals() {
    let mut es = setup(3, 1, b"update");
    let (_, cert) = view_change(&mut es, 6);
    // every enclave is past counter 7 of view 0 here
    assert!(es.iter().all(|e| e.counter() >= 3));
    for e in es.iter_mut() {
        e.update_view(&cert).unwrap();
        assert_eq!(e.view(), 1);
        assert_eq!(e.counter(), 0);
        assert_eq!(e.last_validated(), None);
        assert!(!e.is_locked());
        // same certificate twice is not a second view change
        assert!(e.update_view(&cert).is_err());
    }
    // every enclave agrees on the new leader
    let leaders: Vec<_> = es.iter().map(|e| e.leader()).collect();
    assert!(leaders.iter().all(|&x| x == leaders[0]));

    // a second full view change reaches view 2
    let (_, cert2) = view_change(&mut es, 2);
    for e in es.iter_mut() {
        e.update_view(&cert2).unwrap();
        assert_eq!(e.view(), 2);
    }
}

#[test]
fn old_view_proposals_are_rejected_after_update() {
    let mut es = setup(3, 1, b"old-view");
    let l = es[0].leader() as usize;
    let (_, cert) = view_change(&mut es, 2);
    // a proposal of view 0 that the followers never saw
    let stale = propose(&mut es[l], b"late");
    for (i, e) in es.iter_mut().enumerate() {
        e.update_view(&cert).unwrap();
        if i != l {
            let ct = stale.1.share_for(i as u32).unwrap().clone();
            assert!(matches!(
                e.verify_counter(&stale.0, &ct),
                Err(EnclaveError::InvalidCounter { .. })
            ));
        }
    }
}

#[test]
fn proofs_are_bound_to_their_target() {
    let mut es = setup(3, 1, b"bound");
    let (l, a, b) = roles(&es);
    let p = propose(&mut es[l], b"r0");
    vote(&mut es[a], &p).unwrap();
    vote(&mut es[b], &p).unwrap();
    let proofs: Vec<_> = es.iter_mut().map(|e| e.get_highest_message(Some(&p.0)).unwrap()).collect();
    assert!(proofs.iter().all(|q| q.target == 1));

    let next = es[0].leader_of(2) as usize;
    assert_eq!(
        es[next].merge_highest_messages(2, &proofs),
        Err(EnclaveError::InsufficientQuorum { valid: 0, needed: 2 })
    );
    // a retargeted proof keeps its counter and consumes nothing
    let mut moved = Vec::new();
    for (e, old) in es.iter_mut().zip(&proofs) {
        let before = e.current();
        let q = e.retarget_proof(2).unwrap();
        assert_eq!(q.proof_counter, old.proof_counter);
        assert_eq!(q.target, 2);
        assert!(q.verify(e.directory()));
        assert_eq!(e.current(), before);
        assert!(e.retarget_proof(2).is_err());
        assert!(e.retarget_proof(1).is_err());
        moved.push(q);
    }
    let mut relabelled = proofs[0].clone();
    relabelled.target = 2;
    assert!(!relabelled.verify(es[0].directory()));
    let anchor = es[next].merge_highest_messages(2, &moved).unwrap();
    assert_eq!(anchor.target_view, 2);
    assert_eq!(anchor.highest.unwrap().counter, CounterValue::new(0, 0));
}

#[test]
fn retarget_needs_an_outstanding_proof() {
    let mut es = setup(3, 1, b"retarget");
    assert!(es[0].retarget_proof(2).is_err());
    es[0].get_highest_message(None).unwrap();
    assert!(es[0].retarget_proof(3).is_ok());
}

#[test]
fn anchors_are_adopted_in_target_order() {
    let mut es = setup(3, 1, b"order");
    let next = es[0].leader_of(2) as usize;
    let proofs: Vec<_> = es.iter_mut().map(|e| e.get_highest_message_for(None, 2).unwrap()).collect();
    let anchor = es[next].merge_highest_messages(2, &proofs).unwrap();
    let (x, y) = {
        let o: Vec<usize> = (0..3).filter(|&i| i != next).collect();
        (o[0], o[1])
    };
    // x has already spoken for the view change to 3
    es[x].retarget_proof(3).unwrap();
    assert!(matches!(es[x].sync_with_highest(&anchor), Err(EnclaveError::InvalidMessage(_))));
    es[y].sync_with_highest(&anchor).unwrap();
    assert_eq!(es[y].transition_target(), Some(2));
    assert!(es[y].sync_with_highest(&anchor).is_err());
}

/// Two view-change rounds over n = 3 with the view-0 leader `l` and
/// followers `a` (leader of view 1) and `b` (leader of view 2).
struct TwoRounds {
    es: Vec<Enclave>,
    l: usize,
    a: usize,
    b: usize,
    /// `l`'s view-0 proposals 0..=2; only the first was voted by a and b.
    old: Vec<(SignedCounter, SecretEnvelope)>,
    nv1: (SignedCounter, SecretEnvelope),
    cert1: NewViewCert,
    /// `b`'s refusal of `old[1]` after adopting the first anchor.
    late_vote: Result<VoteShare, EnclaveError>,
}

fn two_rounds() -> TwoRounds {
    let (mut es, l, a, b) = (0u32..)
        .find_map(|s| {
            let es = setup(3, 1, &s.to_be_bytes());
            let l = es[0].leader() as usize;
            let a = es[0].leader_of(1) as usize;
            let b = es[0].leader_of(2) as usize;
            (a != l && b != l && b != a).then_some((es, l, a, b))
        })
        .unwrap();
    let old: Vec<_> = (0..3u64).map(|i| propose(&mut es[l], &i.to_be_bytes())).collect();
    vote(&mut es[a], &old[0]).unwrap();
    vote(&mut es[b], &old[0]).unwrap();

    let pa = es[a].get_highest_message(Some(&old[0].0)).unwrap();
    let pb = es[b].get_highest_message(Some(&old[0].0)).unwrap();
    let anchor = es[a].merge_highest_messages(1, &[pa, pb]).unwrap();
    let at = es[a].current();
    let env = es[a].generate_secret(at).unwrap();
    let nv1 = (es[a].create_counter(hash(b"nv1")), env);
    assert_eq!(nv1.0.issuer_view, 1);
    assert_eq!(nv1.0.counter, CounterValue::new(1, 0));
    es[b].sync_with_highest(&anchor).unwrap();
    let late_vote = vote(&mut es[b], &old[1]);
    let sa = vote(&mut es[a], &nv1).unwrap();
    let sb = vote(&mut es[b], &nv1).unwrap();
    let cert1 = NewViewCert {
        commitment: nv1.1.commitment.clone(),
        secret: Secret(reconstruct(&[sa.share, sb.share], 1).unwrap()),
    };
    TwoRounds { es, l, a, b, old, nv1, cert1, late_vote }
}

#[test]
fn proposals_from_an_abandoned_view_are_refused() {
    let t = two_rounds();
    assert_eq!(t.old[1].0.counter, CounterValue::new(1, 0));
    assert_eq!(t.late_vote, Err(EnclaveError::InvalidMessage("proposal from an abandoned view")));
}

#[test]
fn merge_ranks_view_change_rounds_above_older_proposals() {
    let mut t = two_rounds();
    let (l, b) = (t.l, t.b);
    // l voted its own (2,0) of view 0; b voted the round for view 1 at (1,0)
    let pl = t.es[l].get_highest_message_for(Some(&t.old[2].0), 2).unwrap();
    let pb = t.es[b].get_highest_message_for(Some(&t.nv1.0), 2).unwrap();
    let anchor = t.es[b].merge_highest_messages(2, &[pl, pb]).unwrap();
    let h = anchor.highest.unwrap();
    assert_eq!(h.counter, CounterValue::new(1, 0));
    assert_eq!(h.issuer_view, 1);
}

#[test]
fn lower_certificate_needs_evidence_after_a_higher_round() {
    let mut t = two_rounds();
    let (l, a, b) = (t.l, t.a, t.b);
    let pl = t.es[l].get_highest_message_for(Some(&t.old[2].0), 2).unwrap();
    let pb = t.es[b].get_highest_message_for(Some(&t.nv1.0), 2).unwrap();
    t.es[b].merge_highest_messages(2, &[pl, pb]).unwrap();

    // a and l enter view 1 and certify a proposal inside it
    t.es[a].update_view(&t.cert1).unwrap();
    t.es[l].update_view(&t.cert1).unwrap();
    let x = propose(&mut t.es[a], b"inside");
    assert_eq!(x.0.issuer_view, 1);
    let sl = vote(&mut t.es[l], &x).unwrap();
    let sa = vote(&mut t.es[a], &x).unwrap();
    let secret = Secret(reconstruct(&[sl.share, sa.share], 1).unwrap());

    let e = &mut t.es[b];
    assert_eq!(e.update_view(&t.cert1), Err(EnclaveError::AbandonedViewChange { target: 1 }));
    assert!(e.update_view_superseding(&t.cert1, &t.cert1.commitment, &t.cert1.secret).is_err());
    assert!(e.update_view_superseding(&t.cert1, &x.1.commitment, &t.cert1.secret).is_err());
    assert_eq!(e.view(), 0);
    e.update_view_superseding(&t.cert1, &x.1.commitment, &secret).unwrap();
    assert_eq!(e.view(), 1);
    assert_eq!(e.transition_target(), None);
}

#[test]
fn election_is_deterministic_across_enclaves() {
    let es = setup(5, 2, b"elect");
    let d = hash(b"qc");
    for v in 0..50 {
        let l = es[0].elect_leader(v, &d);
        assert!(es.iter().all(|e| e.elect_leader(v, &d) == l));
        assert_eq!(l, es[3].elect_leader(v, &d));
    }
}

#[test]
fn election_is_sensitive_to_every_digest_bit() {
    let es = setup(5, 2, b"elect-bits");
    let mut prg = Prg::new(b"digests");
    let trials = 10_000;
    let mut changed = 0;
    for t in 0..trials {
        let mut d = [0u8; 32];
        prg.fill(&mut d);
        let base = es[0].elect_leader(7, &Digest(d));
        d[(t / 8) % 32] ^= 1 << (t % 8);
        if es[0].elect_leader(7, &Digest(d)) != base {
            changed += 1;
        }
    }
    let frac = changed as f64 / trials as f64;
    assert!((frac - 0.8).abs() < 0.03, "changed fraction {frac}");
}

#[test]
fn election_is_uniform() {
    let es = setup(5, 2, b"elect-uniform");
    let mut prg = Prg::new(b"uniform-digests");
    let mut bins = [0f64; 5];
    let draws = 10_000;
    for _ in 0..draws {
        let mut d = [0u8; 32];
        prg.fill(&mut d);
        bins[es[0].elect_leader(3, &Digest(d)) as usize] += 1.0;
    }
    let exp = draws as f64 / 5.0;
    let stat: f64 = bins.iter().map(|o| (o - exp).powi(2) / exp).sum();
    assert!(stat < ChiSquared::new(4.0).unwrap().inverse_cdf(0.99));
}

#[test]
fn replaying_a_call_sequence_reproduces_outputs() {
    let run = || {
        let mut es = setup(3, 1, b"replay");
        let (l, a, _) = roles(&es);
        let mut out = Vec::new();
        for i in 0..5u64 {
            let p = propose(&mut es[l], &i.to_be_bytes());
            out.push(bincode::serialize(&p).unwrap());
            out.push(bincode::serialize(&vote(&mut es[a], &p).unwrap()).unwrap());
        }
        out
    };
    assert_eq!(run(), run());
}

mod properties {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    #[derive(Debug, Clone)]
    enum Act {
        Propose(u8),
        Vote(usize, usize),
        Proof(usize, usize),
        ProofEmpty(usize),
    }

    fn act() -> impl Strategy<Value = Act> {
        prop_oneof![
            any::<u8>().prop_map(Act::Propose),
            (0..3usize, 0..16usize).prop_map(|(r, p)| Act::Vote(r, p)),
            (0..3usize, 0..16usize).prop_map(|(r, p)| Act::Proof(r, p)),
            (0..3usize).prop_map(Act::ProofEmpty),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn no_equivocation_and_one_vote(acts in proptest::collection::vec(act(), 1..40)) {
            let mut es = setup(3, 1, b"prop");
            let l = es[0].leader() as usize;
            let mut props: Vec<(SignedCounter, SecretEnvelope)> = Vec::new();
            for a in acts {
                match a {
                    Act::Propose(x) => props.push(propose(&mut es[l], &[x])),
                    Act::Vote(r, p) if !props.is_empty() => {
                        let p = props[p % props.len()].clone();
                        let _ = vote(&mut es[r], &p);
                    }
                    Act::Proof(r, p) if !props.is_empty() => {
                        let p = props[p % props.len()].0.clone();
                        let _ = es[r].get_highest_message(Some(&p));
                    }
                    Act::ProofEmpty(r) => { let _ = es[r].get_highest_message(None); }
                    _ => {}
                }
            }
            for e in es.iter_mut() {
                let mut signed: HashMap<CounterValue, Digest> = HashMap::new();
                let mut shares = std::collections::HashSet::new();
                for ev in e.drain_audit() {
                    match ev {
                        AuditEvent::Signed { counter, payload } => {
                            if let Some(prev) = signed.insert(counter, payload) {
                                prop_assert_eq!(prev, payload);
                            }
                        }
                        AuditEvent::ShareReleased { counter, .. } => {
                            prop_assert!(shares.insert(counter), "two shares at {:?}", counter);
                        }
                        _ => {}
                    }
                }
            }
        }
    }
}

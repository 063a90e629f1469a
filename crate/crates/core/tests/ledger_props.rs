use std::collections::BTreeSet;

use fishnet_core::client::{build_withdrawal_request, tag_outgoing_request};
use fishnet_core::consent::ConsentConfig;
use fishnet_core::error::LedgerError;
use fishnet_core::ledger::{
    CompletionAction, EventFilter, EventKind, Ledger, LedgerCall, TagBatchEntry, WithdrawalOutcome, TX_CAPACITY,
};
use fishnet_core::request::HttpRequest;
use fishnet_core::{keccak256, Digest, KeyPair};
use proptest::prelude::*;

fn entries(n: usize) -> Vec<TagBatchEntry> {
    let key = KeyPair::from_seed(b"bulk");
    let sig = key.sign(&keccak256(b"bulk"));
    (0..n)
        .map(|i| TagBatchEntry {
            hash: keccak256(&(i as u64).to_le_bytes()),
            sig: sig.clone(),
            custodian: "web".into(),
        })
        .collect()
}

#[test]
fn batch_capacity_boundary() {
    let mut l = Ledger::new(0);
    let r = l.submit_tag_batch(entries(TX_CAPACITY)).unwrap();
    assert_eq!((r.entry_count, r.first_seq, r.last_seq), (47_000, 1, 47_000));
    let mut l = Ledger::new(0);
    assert!(matches!(
        l.submit_tag_batch(entries(TX_CAPACITY + 1)),
        Err(LedgerError::CapacityExceeded {
            count: 47_001,
            limit: 47_000
        })
    ));
    assert_eq!(l.current_seq(), 0);
    assert!(l.transactions().is_empty());
}

#[derive(Debug, Clone)]
enum Op {
    Batch(Vec<u8>),
    Event(u8, u8, u8),
    Withdraw(u8),
    Complete(u8, u8, bool),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        proptest::collection::vec(0u8..8, 1..4).prop_map(Op::Batch),
        (0u8..10, 0u8..3, 0u8..3).prop_map(|(t, k, a)| Op::Event(t, k, a)),
        (0u8..8).prop_map(Op::Withdraw),
        (0u8..8, 0u8..4, any::<bool>()).prop_map(|(t, a, d)| Op::Complete(t, a, d)),
    ]
}

const ACTORS: [&str; 4] = ["web", "Googlebot", "ml-party", "stranger"];

struct World {
    key: KeyPair,
    posts: Vec<(Digest, fishnet_core::client::LocalConsentRecord)>,
}

impl World {
    fn new() -> Self {
        let key = KeyPair::from_seed(b"owner");
        let cfg = ConsentConfig::parse("default:1").unwrap();
        let posts = (0..10u8)
            .map(|i| {
                let req = HttpRequest::new("POST", "/submit").body(format!("post {i}").into_bytes());
                let rec = tag_outgoing_request(req, &key, &cfg, 0).1.unwrap();
                (rec.hash, rec)
            })
            .collect();
        World { key, posts }
    }
}

fn run(world: &World, ops: &[Op], l: &mut Ledger, calls: &mut Vec<LedgerCall>) {
    for op in ops {
        let call = match op {
            Op::Batch(ix) => LedgerCall::SubmitTagBatch {
                entries: ix
                    .iter()
                    .map(|i| {
                        let (h, r) = &world.posts[*i as usize];
                        TagBatchEntry {
                            hash: *h,
                            sig: r.sig.clone(),
                            custodian: "web".into(),
                        }
                    })
                    .collect(),
            },
            Op::Event(t, k, a) => LedgerCall::AppendEvent {
                tag: world.posts[*t as usize].0,
                kind: [EventKind::Crawl, EventKind::Transfer, EventKind::Training][*k as usize],
                actor: ACTORS[*a as usize].into(),
                detail: String::new(),
            },
            Op::Withdraw(t) => {
                let ch = l.issue_challenge();
                calls.push(LedgerCall::IssueChallenge);
                LedgerCall::SubmitWithdrawal {
                    request: build_withdrawal_request(&world.posts[*t as usize].1, &world.key, &ch),
                }
            }
            Op::Complete(t, a, d) => LedgerCall::ReportCompletion {
                tag: world.posts[*t as usize].0,
                custodian: ACTORS[*a as usize].into(),
                action: if *d {
                    CompletionAction::Deletion
                } else {
                    CompletionAction::Retraining
                },
            },
        };
        calls.push(call.clone());
        l.apply(call);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn invariants_hold_and_replay_is_identical(ops in proptest::collection::vec(op(), 0..40)) {
        let world = World::new();
        let mut l = Ledger::new(7);
        let mut calls = Vec::new();
        run(&world, &ops, &mut l, &mut calls);

        // batch entries and events share one strictly increasing sequence
        let mut seqs: Vec<u64> = l.events().iter().map(|e| e.seq).collect();
        seqs.extend(l.transactions().iter().flat_map(|t| t.first_seq..=t.last_seq));
        seqs.sort_unstable();
        prop_assert!(seqs.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(seqs.last().copied().unwrap_or(0), l.current_seq());
        prop_assert!(l.withdrawals_are_backed());
        for t in l.tags() {
            prop_assert!(t.events.windows(2).all(|w| w[0].seq < w[1].seq));
            let withdrawals = t.events.iter().filter(|e| e.kind == EventKind::WithdrawalRequested).count();
            prop_assert!(withdrawals <= 1);
        }

        let mut replay = Ledger::new(7);
        for c in &calls {
            replay.apply(c.clone());
        }
        prop_assert_eq!(
            serde_json::to_vec(l.events()).unwrap(),
            serde_json::to_vec(replay.events()).unwrap()
        );
    }

    #[test]
    fn polling_never_repeats_or_skips(ops in proptest::collection::vec(op(), 0..40), step in 1usize..5) {
        let world = World::new();
        let mut l = Ledger::new(3);
        let mut calls = Vec::new();
        let mut seen = Vec::new();
        let mut hw = 0;
        for chunk in ops.chunks(step) {
            run(&world, chunk, &mut l, &mut calls);
            let batch = l.poll_events(hw, &EventFilter::default());
            seen.extend(batch.events.iter().map(|e| e.seq));
            hw = batch.high_water;
        }
        let all: Vec<u64> = l.events().iter().map(|e| e.seq).collect();
        prop_assert_eq!(&seen, &all);
        prop_assert_eq!(seen.iter().collect::<BTreeSet<_>>().len(), seen.len());
    }
}

#[test]
fn withdrawal_completes_after_every_custodian_deletes() {
    let world = World::new();
    let mut l = Ledger::new(1);
    let (h, rec) = &world.posts[0];
    l.submit_tag_batch(vec![TagBatchEntry {
        hash: *h,
        sig: rec.sig.clone(),
        custodian: "web".into(),
    }])
    .unwrap();
    l.append_event(*h, EventKind::Crawl, "Googlebot", "/posts").unwrap();
    l.append_event(*h, EventKind::Transfer, "Googlebot", "dataset").unwrap();
    l.append_event(*h, EventKind::Training, "ml-party", "").unwrap();
    let ch = l.issue_challenge();
    let out = l.submit_withdrawal(build_withdrawal_request(rec, &world.key, &ch));
    assert!(matches!(out, WithdrawalOutcome::Accepted { duplicate: false, .. }));
    let filter = EventFilter {
        party: Some("ml-party".into()),
        tag: None,
    };
    let batch = l.poll_events(0, &filter);
    assert!(batch.events.iter().any(|e| e.kind == EventKind::WithdrawalRequested));
    for party in ["web", "Googlebot"] {
        l.report_completion(*h, party, CompletionAction::Deletion).unwrap();
    }
    assert!(l.query_tag(h).unwrap().withdrawal.request_seq().is_some());
    l.report_completion(*h, "ml-party", CompletionAction::Retraining)
        .unwrap();
    let done = l.report_completion(*h, "ml-party", CompletionAction::Deletion).unwrap();
    assert!(matches!(
        l.query_tag(h).unwrap().withdrawal,
        fishnet_core::ledger::WithdrawalState::Completed { completed_seq, .. } if completed_seq == done
    ));
    assert_eq!(
        l.report_completion(*h, "ml-party", CompletionAction::Deletion).unwrap(),
        done
    );
    assert!(matches!(
        l.report_completion(*h, "stranger", CompletionAction::Deletion),
        Err(LedgerError::NotCustodian { .. })
    ));
}

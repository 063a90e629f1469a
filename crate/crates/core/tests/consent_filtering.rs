//! Served output checked against a brute-force model that knows nothing of
//! the store: a flat list of posts with raw rule lists.

use fishnet_core::client::tag_outgoing_request;
use fishnet_core::consent::{check_consent, mask_content, ConsentConfig, Flag, TaggedContent, MASK_PLACEHOLDER};
use fishnet_core::request::HttpRequest;
use fishnet_core::site::{ServeView, SiteStore};
use fishnet_core::{keccak256, KeyPair};
use proptest::prelude::*;

const CRAWLERS: [&str; 2] = ["Googlebot", "GPTBot"];

#[derive(Debug, Clone)]
enum Kind {
    Plain,
    NonCrawlable,
    Tagged(Vec<(String, bool)>, Option<bool>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Seen {
    Plain(String),
    Tagged(String),
    Masked,
}

fn header_for(rules: &[(String, bool)], default: Option<bool>) -> String {
    let mut parts: Vec<String> = rules.iter().map(|(n, f)| format!("{n}:{}", u8::from(*f))).collect();
    if let Some(d) = default {
        parts.push(format!("default:{}", u8::from(d)));
    }
    parts.join(";")
}

fn oracle_allows(rules: &[(String, bool)], default: Option<bool>, crawler: &str) -> bool {
    for (n, f) in rules {
        if n == crawler {
            return *f;
        }
    }
    default.unwrap_or(true)
}

fn oracle(items: &[(String, Kind)], visitor: Option<&str>) -> Vec<Seen> {
    let mut out = Vec::new();
    for (content, kind) in items {
        match (visitor, kind) {
            (None, _) => out.push(Seen::Plain(content.clone())),
            (Some(_), Kind::NonCrawlable) => {}
            (Some(_), Kind::Plain) => out.push(Seen::Plain(content.clone())),
            (Some(c), Kind::Tagged(rules, default)) => out.push(if oracle_allows(rules, *default, c) {
                Seen::Tagged(content.clone())
            } else {
                Seen::Masked
            }),
        }
    }
    out
}

fn build_site(items: &[(String, Kind)]) -> SiteStore {
    let key = KeyPair::from_seed(b"author");
    let mut site = SiteStore::new();
    for (content, kind) in items {
        let req = HttpRequest::new("POST", "/submit").body(content.as_bytes());
        let req = match kind {
            Kind::Plain => req,
            Kind::NonCrawlable => req.header("X-Non-Crawlable", "1"),
            Kind::Tagged(rules, default) => {
                let config = ConsentConfig::parse(&header_for(rules, *default)).unwrap();
                tag_outgoing_request(req, &key, &config, 0).0
            }
        };
        site.handle_data_submission(&req, "author", 0).unwrap();
    }
    site
}

fn observed(site: &SiteStore, visitor: Option<&str>) -> Vec<Seen> {
    let view = visitor.map_or(ServeView::Regular, ServeView::Crawler);
    let served = site.serve(view);
    let mut tags = served.served_tags.iter();
    served
        .items
        .iter()
        .map(|s| match (&s.item.tag, s.item.masked) {
            (_, true) => {
                assert_eq!(s.item.content, MASK_PLACEHOLDER);
                assert!(s.item.tag.is_none());
                Seen::Masked
            }
            (Some(t), false) => {
                assert_eq!(t.hash, keccak256(s.item.content.as_bytes()));
                assert_eq!(tags.next(), Some(&t.hash));
                Seen::Tagged(s.item.content.clone())
            }
            (None, false) => Seen::Plain(s.item.content.clone()),
        })
        .collect()
}

fn combo_config(bits: u8) -> (Vec<(String, bool)>, Option<bool>) {
    let rules = vec![
        (CRAWLERS[0].to_string(), bits & 1 != 0),
        (CRAWLERS[1].to_string(), bits & 2 != 0),
    ];
    let default = (bits & 8 != 0).then_some(bits & 4 != 0);
    (rules, default)
}

#[test]
fn every_config_combination_matches_oracle() {
    let items: Vec<(String, Kind)> = (0..16u8)
        .map(|bits| {
            let (rules, default) = combo_config(bits);
            (format!("post number {bits}"), Kind::Tagged(rules, default))
        })
        .collect();
    let site = build_site(&items);
    for visitor in [None, Some(CRAWLERS[0]), Some(CRAWLERS[1]), Some("UnlistedBot")] {
        assert_eq!(observed(&site, visitor), oracle(&items, visitor), "{visitor:?}");
    }
}

fn name() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("Googlebot".to_string()),
        Just("GPTBot".to_string()),
        "[A-Za-z]{1,8}"
    ]
}

fn kind() -> impl Strategy<Value = Kind> {
    prop_oneof![
        Just(Kind::Plain),
        Just(Kind::NonCrawlable),
        (
            proptest::collection::btree_map(name(), any::<bool>(), 0..4),
            proptest::option::of(any::<bool>())
        )
            .prop_map(|(m, d)| {
                let d = if m.is_empty() { d.or(Some(true)) } else { d };
                Kind::Tagged(m.into_iter().collect(), d)
            }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mixed_fixtures_match_oracle(kinds in proptest::collection::vec(kind(), 0..=16)) {
        let items: Vec<(String, Kind)> = kinds
            .into_iter()
            .enumerate()
            .map(|(i, k)| (format!("item {i} <b>&amp;</b>"), k))
            .collect();
        let site = build_site(&items);
        for visitor in [None, Some(CRAWLERS[0]), Some(CRAWLERS[1])] {
            prop_assert_eq!(observed(&site, visitor), oracle(&items, visitor));
        }
    }

    #[test]
    fn config_codec_round_trips(
        m in proptest::collection::btree_map(name(), any::<bool>(), 0..6),
        d in proptest::option::of(any::<bool>()),
    ) {
        let d = if m.is_empty() { d.or(Some(false)) } else { d };
        let rules: Vec<(String, bool)> = m.into_iter().collect();
        let c = ConsentConfig::parse(&header_for(&rules, d)).unwrap();
        let again = ConsentConfig::parse(&c.serialize()).unwrap();
        prop_assert_eq!(again.serialize(), c.serialize());
        prop_assert_eq!(&again, &c);
        for crawler in CRAWLERS.iter().copied().chain(rules.iter().map(|(n, _)| n.as_str())) {
            prop_assert_eq!(check_consent(&c, crawler).is_allow(), oracle_allows(&rules, d, crawler));
        }
    }

    #[test]
    fn pair_order_is_irrelevant(
        m in proptest::collection::btree_map(name(), any::<bool>(), 1..6),
        d in any::<bool>(),
        rotate in 0usize..6,
    ) {
        let mut rules: Vec<(String, bool)> = m.into_iter().collect();
        let a = ConsentConfig::parse(&header_for(&rules, Some(d))).unwrap();
        let n = rules.len();
        rules.rotate_left(rotate % n);
        rules.reverse();
        let mut pairs: Vec<String> = rules.iter().map(|(k, f)| format!("{k}:{}", u8::from(*f))).collect();
        pairs.insert(rotate % (n + 1), format!("default:{}", u8::from(d)));
        let b = ConsentConfig::parse(&pairs.join(";")).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn masking_is_idempotent(content in ".*") {
        let once = mask_content(TaggedContent::plain(content));
        let twice = mask_content(once.clone());
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once.content.as_str(), MASK_PLACEHOLDER);
        prop_assert!(once.masked && once.tag.is_none());
    }
}

#[test]
fn missing_default_allows() {
    let c = ConsentConfig::parse("GPTBot:0").unwrap();
    assert_eq!(check_consent(&c, "Googlebot"), Flag::Allow);
    assert_eq!(check_consent(&c, "GPTBot"), Flag::Deny);
    assert_eq!(check_consent(&c, "gptbot"), Flag::Allow);
}

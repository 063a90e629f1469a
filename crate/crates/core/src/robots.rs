//! Robots Exclusion Protocol (RFC 9309): parsing, rule matching and rendering.
//!
//! Only `User-agent`, `Allow` and `Disallow` are interpreted. Rule paths
//! support `*` wildcards and a trailing `$` anchor; paths are compared as
//! given, without percent-decoding.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotsRule {
    pub allow: bool,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RobotsGroup {
    pub agents: Vec<String>,
    pub rules: Vec<RobotsRule>,
}

impl RobotsGroup {
    pub fn new(agent: &str) -> Self {
        RobotsGroup {
            agents: alloc::vec![agent.to_string()],
            rules: Vec::new(),
        }
    }

    pub fn allow(mut self, path: &str) -> Self {
        self.rules.push(RobotsRule {
            allow: true,
            path: path.to_string(),
        });
        self
    }

    pub fn disallow(mut self, path: &str) -> Self {
        self.rules.push(RobotsRule {
            allow: false,
            path: path.to_string(),
        });
        self
    }
}

/// Parsed robots.txt. Also used as the site policy a server publishes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RobotsPolicy {
    pub groups: Vec<RobotsGroup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host: Option<String>,
}

fn normalize_path(value: &str) -> Option<String> {
    if value.is_empty() {
        return Some(String::new());
    }
    if value.starts_with('/') {
        Some(value.to_string())
    } else if value.starts_with('*') {
        Some(alloc::format!("/{value}"))
    } else {
        None
    }
}

/// Lenient parse: unknown directives and malformed lines are skipped.
pub fn parse_robots(text: &str) -> RobotsPolicy {
    let mut groups: Vec<RobotsGroup> = Vec::new();
    let mut current: Option<RobotsGroup> = None;
    // True while consecutive user-agent lines are still collecting agents.
    let mut collecting_agents = false;

    for raw in text.lines() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        let Some((key, value)) = line.split_once(':') else {
            continue;
        };
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim();
        match key.as_str() {
            "user-agent" => {
                if !collecting_agents {
                    if let Some(g) = current.take() {
                        groups.push(g);
                    }
                    current = Some(RobotsGroup::default());
                    collecting_agents = true;
                }
                if let Some(g) = current.as_mut() {
                    if !value.is_empty() {
                        g.agents.push(value.to_string());
                    }
                }
            }
            "allow" | "disallow" => {
                collecting_agents = false;
                let Some(g) = current.as_mut() else {
                    continue;
                };
                let Some(path) = normalize_path(value) else {
                    continue;
                };
                g.rules.push(RobotsRule {
                    allow: key == "allow",
                    path,
                });
            }
            _ => {}
        }
    }
    if let Some(g) = current {
        groups.push(g);
    }
    groups.retain(|g| !g.agents.is_empty());
    RobotsPolicy { groups, host: None }
}

/// Whether `path` matches a rule pattern (`*` any sequence, trailing `$` end).
pub fn rule_matches(pattern: &str, path: &str) -> bool {
    let (pattern, anchored) = match pattern.strip_suffix('$') {
        Some(p) => (p, true),
        None => (pattern, false),
    };
    let p = pattern.as_bytes();
    let s = path.as_bytes();
    // reachable[j]: pattern prefix consumed so far can end at s[..j]
    let mut reachable = alloc::vec![false; s.len() + 1];
    reachable[0] = true;
    for &c in p {
        if c == b'*' {
            let mut seen = false;
            for r in reachable.iter_mut() {
                seen |= *r;
                *r = seen;
            }
        } else {
            for j in (0..s.len()).rev() {
                reachable[j + 1] = reachable[j] && s[j] == c;
            }
            reachable[0] = false;
        }
    }
    if anchored {
        reachable[s.len()]
    } else {
        reachable.iter().any(|&r| r)
    }
}

impl RobotsPolicy {
    /// Rules that apply to `agent`: every group naming it (case-insensitive),
    /// or the `*` groups when none do.
    pub fn rules_for(&self, agent: &str) -> Vec<&RobotsRule> {
        let named: Vec<&RobotsGroup> = self
            .groups
            .iter()
            .filter(|g| g.agents.iter().any(|a| a != "*" && a.eq_ignore_ascii_case(agent)))
            .collect();
        let chosen = if named.is_empty() {
            self.groups
                .iter()
                .filter(|g| g.agents.iter().any(|a| a == "*"))
                .collect()
        } else {
            named
        };
        chosen.into_iter().flat_map(|g| g.rules.iter()).collect()
    }

    /// Longest matching rule decides; Allow wins a tie; no match allows.
    pub fn is_path_allowed(&self, agent: &str, path: &str) -> bool {
        let mut best: Option<(usize, bool)> = None;
        for rule in self.rules_for(agent) {
            if rule.path.is_empty() || !rule_matches(&rule.path, path) {
                continue;
            }
            let len = rule.path.len();
            best = match best {
                Some((l, a)) if l > len || (l == len && a) => Some((l, a)),
                _ => Some((len, rule.allow)),
            };
        }
        best.map_or(true, |(_, allow)| allow)
    }

    /// Renders robots.txt text, groups in declaration order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, g) in self.groups.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            for a in &g.agents {
                out.push_str("User-agent: ");
                out.push_str(a);
                out.push('\n');
            }
            for r in &g.rules {
                out.push_str(if r.allow { "Allow: " } else { "Disallow: " });
                out.push_str(&r.path);
                out.push('\n');
            }
        }
        out
    }
}

pub fn is_path_allowed(policy: &RobotsPolicy, agent: &str, path: &str) -> bool {
    policy.is_path_allowed(agent, path)
}

pub fn serve_robots(policy: &RobotsPolicy) -> String {
    policy.render()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn canonical_example() {
        let p = parse_robots("User-agent: *\nDisallow: /private/");
        assert_eq!(p.groups.len(), 1);
        assert_eq!(p.groups[0].agents, vec!["*"]);
        assert_eq!(
            p.groups[0].rules,
            vec![RobotsRule {
                allow: false,
                path: "/private/".into()
            }]
        );
        assert!(!p.is_path_allowed("GPTBot", "/private/x"));
        assert!(p.is_path_allowed("GPTBot", "/public/x"));
    }

    #[test]
    fn empty_and_garbage_allow_everything() {
        assert!(parse_robots("").groups.is_empty());
        let p = parse_robots("this is not robots\n<html>\nDisallow: /orphan\n");
        assert!(p.groups.is_empty());
        assert!(p.is_path_allowed("x", "/orphan"));
    }

    #[test]
    fn specific_group_beats_wildcard() {
        let text = "# site rules\nUser-agent: GPTBot\nDisallow: /\n\nUser-agent: *\nDisallow: /private/ # keep out\n";
        let p = parse_robots(text);
        assert_eq!(p.groups.len(), 2);
        assert!(!p.is_path_allowed("GPTBot", "/posts"));
        assert!(!p.is_path_allowed("gptbot", "/posts"));
        assert!(p.is_path_allowed("Googlebot", "/posts"));
        assert!(!p.is_path_allowed("Googlebot", "/private/a"));
    }

    #[test]
    fn directive_names_are_case_insensitive_and_agents_group() {
        let p = parse_robots("USER-AGENT: a\nuser-agent: b\nDISALLOW: /x\nCrawl-delay: 5\nUser-agent: c\nAllow: /");
        assert_eq!(p.groups.len(), 2);
        assert_eq!(p.groups[0].agents, vec!["a", "b"]);
        assert!(!p.is_path_allowed("b", "/x/y"));
        assert!(p.is_path_allowed("c", "/x/y"));
    }

    #[test]
    fn longest_match_and_tie() {
        let p = RobotsPolicy {
            groups: vec![RobotsGroup::new("*").disallow("/p").allow("/p/ok")],
            host: None,
        };
        assert!(p.is_path_allowed("any", "/p/ok/1"));
        assert!(!p.is_path_allowed("any", "/p/no"));
        let tie = RobotsPolicy {
            groups: vec![RobotsGroup::new("*").disallow("/a").allow("/a")],
            host: None,
        };
        assert!(tie.is_path_allowed("any", "/a/b"));
        let empty_disallow = parse_robots("User-agent: *\nDisallow:\n");
        assert!(empty_disallow.is_path_allowed("x", "/anything"));
    }

    #[test]
    fn wildcards_and_anchor() {
        assert!(rule_matches("/*.gif$", "/img/a.gif"));
        assert!(!rule_matches("/*.gif$", "/img/a.gif?x=1"));
        assert!(rule_matches("/*.gif", "/img/a.gif?x=1"));
        assert!(rule_matches("/a*b", "/a-x-b-tail"));
        assert!(!rule_matches("/a*b", "/a-x-c"));
        assert!(rule_matches("/", "/"));
        assert!(rule_matches("/x$", "/x"));
        assert!(!rule_matches("/x$", "/xy"));
        let p = parse_robots("User-agent: *\nDisallow: *.gif$\n");
        assert!(!p.is_path_allowed("a", "/z.gif"));
    }

    #[test]
    fn render_forms() {
        let p = RobotsPolicy {
            groups: vec![RobotsGroup::new("*").disallow("/private/")],
            host: None,
        };
        assert_eq!(serve_robots(&p), "User-agent: *\nDisallow: /private/\n");
        assert_eq!(serve_robots(&RobotsPolicy::default()), "");
        let two = RobotsPolicy {
            groups: vec![
                RobotsGroup::new("GPTBot").disallow("/"),
                RobotsGroup::new("*").disallow("/private/").allow("/private/ok"),
            ],
            host: None,
        };
        let text = serve_robots(&two);
        assert_eq!(
            text,
            "User-agent: GPTBot\nDisallow: /\n\nUser-agent: *\nDisallow: /private/\nAllow: /private/ok\n"
        );
        assert_eq!(parse_robots(&text), two);
    }
}

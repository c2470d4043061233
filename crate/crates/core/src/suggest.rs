//! Reflection prompts and sub-attribute suggestions.

use std::collections::HashSet;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::model::{DecisionDocument, NodeId, ValueTree};
use crate::ops;

pub const DEFAULT_SUGGESTION_COUNT: usize = 5;
pub const DEFAULT_TOKEN_ENV: &str = "VALTREE_SUGGEST_TOKEN";

const BUILTIN_CORPUS: &str = include_str!("default_corpus.txt");

/// Prompt shown in a node's note pane.
pub fn reflection_prompt(tree: &ValueTree, node: NodeId) -> Result<String> {
    let name = &tree.node(node)?.name;
    let kids = tree.children(node);
    if kids.is_empty() {
        return Ok(
            "Describe how you would judge/measure this attribute for each alternative.".to_owned(),
        );
    }
    let quoted: Vec<String> = kids
        .iter()
        .map(|k| format!("'{}'", tree.nodes[k].name))
        .collect();
    let list = match quoted.split_last() {
        Some((last, [])) => last.clone(),
        Some((last, init)) => format!("{} and {last}", init.join(", ")),
        None => unreachable!(),
    };
    Ok(format!(
        "How do you intend to combine {list} into your judgment of '{name}'?"
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("suggestion endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("suggestion endpoint timed out after {0:?}")]
    Timeout(Duration),
    #[error("suggestion endpoint answered with HTTP {0}")]
    Status(u16),
    #[error("could not parse suggestion response: {0}")]
    Unparsable(String),
    #[error("suggestion corpus: {0}")]
    Corpus(String),
}

/// Context handed to a provider.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuggestionRequest {
    pub goal: String,
    pub scoring_goal: String,
    pub outline: String,
    pub focus_path: Vec<String>,
    pub k: usize,
}

impl SuggestionRequest {
    pub fn focus_name(&self) -> &str {
        self.focus_path.last().map(String::as_str).unwrap_or("")
    }

    /// Plain-text prompt sent to a completion endpoint.
    pub fn to_prompt(&self) -> String {
        format!(
            "Decision goal: {}\nScoring goal: {}\nValue tree:\n{}\nFocus attribute: {}\n\
             List up to {} sub-attributes that \"{}\" could be decomposed into, one per line.\n",
            self.goal,
            self.scoring_goal,
            self.outline.trim_end(),
            self.focus_path.join(" / "),
            self.k,
            self.focus_name(),
        )
    }
}

pub trait SuggestionProvider: Send + Sync {
    /// Raw candidates; filtering and truncation happen in
    /// [`suggest_subattributes`].
    fn candidates(&self, request: &SuggestionRequest) -> Result<Vec<String>, ProviderError>;
}

/// Keyword lookup against a plain-text corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticCorpus {
    entries: Vec<(String, Vec<String>)>,
    fallback: Vec<String>,
}

impl StaticCorpus {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_CORPUS).expect("built-in corpus parses")
    }

    pub fn from_path(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Corpus(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Lines of `keyword: candidate; candidate; ...`; `#` starts a comment
    /// and the keyword `*` holds the fallback list.
    pub fn parse(text: &str) -> Result<Self, ProviderError> {
        let mut entries = Vec::new();
        let mut fallback = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line.split_once(':').ok_or_else(|| {
                ProviderError::Corpus(format!("line {}: expected `keyword: candidates`", n + 1))
            })?;
            let key = key.trim().to_lowercase();
            let candidates: Vec<String> = rest
                .split(';')
                .map(str::trim)
                .filter(|c| !c.is_empty())
                .map(str::to_owned)
                .collect();
            if key == "*" {
                fallback = candidates;
            } else if key.is_empty() {
                return Err(ProviderError::Corpus(format!(
                    "line {}: empty keyword",
                    n + 1
                )));
            } else {
                entries.push((key, candidates));
            }
        }
        Ok(Self { entries, fallback })
    }

    pub fn lookup(&self, name: &str) -> &[String] {
        let tokens: HashSet<String> = name
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect();
        self.entries
            .iter()
            .find(|(key, _)| tokens.contains(key))
            .map(|(_, c)| c.as_slice())
            .unwrap_or(&self.fallback)
    }
}

impl SuggestionProvider for StaticCorpus {
    fn candidates(&self, request: &SuggestionRequest) -> Result<Vec<String>, ProviderError> {
        Ok(self.lookup(request.focus_name()).to_vec())
    }
}

/// Completion endpoint speaking plain UTF-8 text over HTTP POST.
#[derive(Debug, Clone)]
pub struct RemoteCompletion {
    pub endpoint: String,
    pub token_env: Option<String>,
    pub timeout: Duration,
}

impl RemoteCompletion {
    fn token(&self) -> Option<String> {
        self.token_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|t| !t.is_empty())
    }
}

impl SuggestionProvider for RemoteCompletion {
    fn candidates(&self, request: &SuggestionRequest) -> Result<Vec<String>, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| ProviderError::Unreachable(e.to_string()))?;
        let mut req = client
            .post(&self.endpoint)
            .header("content-type", "text/plain; charset=utf-8")
            .body(request.to_prompt());
        if let Some(token) = self.token() {
            req = req.bearer_auth(token);
        }
        let mut resp = req.send().map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout(self.timeout)
            } else {
                ProviderError::Unreachable(e.to_string())
            }
        })?;
        if !resp.status().is_success() {
            return Err(ProviderError::Status(resp.status().as_u16()));
        }
        let mut bytes = Vec::new();
        resp.read_to_end(&mut bytes).map_err(|e| {
            if e.kind() == std::io::ErrorKind::TimedOut {
                ProviderError::Timeout(self.timeout)
            } else {
                ProviderError::Unreachable(e.to_string())
            }
        })?;
        let text = String::from_utf8(bytes)
            .map_err(|_| ProviderError::Unparsable("body is not UTF-8".into()))?;
        parse_completion(&text)
    }
}

/// Accepts a JSON array of strings or a newline-separated list, with
/// optional bullets or numbering.
pub fn parse_completion(text: &str) -> Result<Vec<String>, ProviderError> {
    let trimmed = text.trim();
    if trimmed.starts_with('[') {
        return serde_json::from_str::<Vec<String>>(trimmed)
            .map_err(|e| ProviderError::Unparsable(e.to_string()));
    }
    if trimmed.contains('\0') {
        return Err(ProviderError::Unparsable("body contains NUL bytes".into()));
    }
    Ok(trimmed
        .lines()
        .map(|line| {
            let l = line.trim();
            let l = l.trim_start_matches(['-', '*', '•']).trim_start();
            let digits = l.chars().take_while(|c| c.is_ascii_digit()).count();
            let l = if digits > 0 && l[digits..].starts_with(['.', ')']) {
                l[digits + 1..].trim_start()
            } else {
                l
            };
            l.trim_matches('"').trim().to_owned()
        })
        .filter(|l| !l.is_empty())
        .collect())
}

/// Provider selection as it appears in service and CLI configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    StaticCorpus {
        path: Option<PathBuf>,
    },
    RemoteCompletion {
        endpoint: String,
        #[serde(default)]
        token_env: Option<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    10_000
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::StaticCorpus { path: None }
    }
}

impl ProviderConfig {
    pub fn build(&self) -> Result<Box<dyn SuggestionProvider>, ProviderError> {
        Ok(match self {
            ProviderConfig::StaticCorpus { path: None } => Box::new(StaticCorpus::builtin()),
            ProviderConfig::StaticCorpus { path: Some(p) } => Box::new(StaticCorpus::from_path(p)?),
            ProviderConfig::RemoteCompletion {
                endpoint,
                token_env,
                timeout_ms,
            } => Box::new(RemoteCompletion {
                endpoint: endpoint.clone(),
                token_env: Some(
                    token_env
                        .clone()
                        .unwrap_or_else(|| DEFAULT_TOKEN_ENV.to_owned()),
                ),
                timeout: Duration::from_millis(*timeout_ms),
            }),
        })
    }
}

pub fn suggestion_request(
    doc: &DecisionDocument,
    node: NodeId,
    k: usize,
) -> Result<SuggestionRequest> {
    doc.tree.node(node)?;
    Ok(SuggestionRequest {
        goal: doc.goal.clone(),
        scoring_goal: doc.scoring_goal.clone(),
        outline: doc.tree.outline(),
        focus_path: doc.tree.path_of(node),
        k,
    })
}

/// Up to `k` candidate children for `node`, unique and not clashing with
/// existing children (case-insensitive).
pub fn suggest_subattributes(
    provider: &dyn SuggestionProvider,
    doc: &DecisionDocument,
    node: NodeId,
    k: usize,
) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::validation("k must be at least 1"));
    }
    let request = suggestion_request(doc, node, k)?;
    let raw = provider.candidates(&request)?;
    Ok(filter_candidates(&doc.tree, node, raw, k))
}

pub fn filter_candidates(
    tree: &ValueTree,
    node: NodeId,
    raw: Vec<String>,
    k: usize,
) -> Vec<String> {
    let mut taken: HashSet<String> = tree
        .children(node)
        .iter()
        .map(|c| tree.nodes[c].name.to_lowercase())
        .collect();
    raw.into_iter()
        .map(|c| c.trim().to_owned())
        .filter(|c| !c.is_empty() && taken.insert(c.to_lowercase()))
        .take(k)
        .collect()
}

/// Adds a suggested name as a child; same contract as `add_child`.
pub fn accept_suggestion(doc: &mut DecisionDocument, node: NodeId, name: &str) -> Result<NodeId> {
    ops::add_child(doc, node, name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{new_decision, remote_workday};
    use std::io::{BufRead, BufReader, Write};
    use std::net::TcpListener;

    fn productivity_doc() -> (DecisionDocument, NodeId) {
        let doc = remote_workday();
        let pi = doc
            .tree
            .child_named(doc.tree.root_id, "Productivity impact")
            .unwrap();
        (doc, pi)
    }

    #[test]
    fn prompts_match_templates() {
        let mut doc = new_decision("g", &["a", "b"], &["productivity impact"], "s").unwrap();
        let pi = doc
            .tree
            .child_named(doc.tree.root_id, "productivity impact")
            .unwrap();
        ops::add_child(&mut doc, pi, "disruption to weekly rhythm").unwrap();
        ops::add_child(&mut doc, pi, "team collaboration").unwrap();
        assert_eq!(
            reflection_prompt(&doc.tree, pi).unwrap(),
            "How do you intend to combine 'disruption to weekly rhythm' and 'team collaboration' into your judgment of 'productivity impact'?"
        );
        let leaf = doc.tree.children(pi)[0];
        assert_eq!(
            reflection_prompt(&doc.tree, leaf).unwrap(),
            "Describe how you would judge/measure this attribute for each alternative."
        );
    }

    #[test]
    fn prompt_list_formatting() {
        let mut doc = new_decision("g", &["a", "b"], &["P"], "s").unwrap();
        let p = doc.tree.children(doc.tree.root_id)[0];
        ops::add_child(&mut doc, p, "C1").unwrap();
        assert_eq!(
            reflection_prompt(&doc.tree, p).unwrap(),
            "How do you intend to combine 'C1' into your judgment of 'P'?"
        );
        ops::add_child(&mut doc, p, "C2").unwrap();
        ops::add_child(&mut doc, p, "C3").unwrap();
        assert_eq!(
            reflection_prompt(&doc.tree, p).unwrap(),
            "How do you intend to combine 'C1', 'C2' and 'C3' into your judgment of 'P'?"
        );
        assert!(matches!(
            reflection_prompt(&doc.tree, NodeId(99)),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn static_corpus_for_productivity() {
        let (doc, pi) = productivity_doc();
        let corpus = StaticCorpus::builtin();
        let got = suggest_subattributes(&corpus, &doc, pi, 5).unwrap();
        assert_eq!(
            got,
            [
                "individual performance",
                "team collaboration",
                "workload",
                "resource allocation",
                "process efficiency"
            ]
        );
        let two = suggest_subattributes(&corpus, &doc, pi, 2).unwrap();
        assert_eq!(two, ["individual performance", "team collaboration"]);
        assert!(suggest_subattributes(&corpus, &doc, pi, 0).is_err());
    }

    #[test]
    fn existing_children_filtered() {
        let (mut doc, pi) = productivity_doc();
        ops::add_child(&mut doc, pi, "Team collaboration").unwrap();
        let got = suggest_subattributes(&StaticCorpus::builtin(), &doc, pi, 5).unwrap();
        assert_eq!(
            got,
            [
                "individual performance",
                "workload",
                "resource allocation",
                "process efficiency"
            ]
        );
        for name in &got {
            let mut copy = doc.clone();
            accept_suggestion(&mut copy, pi, name).unwrap();
        }
    }

    #[test]
    fn fallback_and_first_match() {
        let corpus = StaticCorpus::parse("# c\nalpha: a1; a2\nbeta: b1\n*: g1; g2\n").unwrap();
        assert_eq!(corpus.lookup("Beta and Alpha"), ["a1", "a2"]);
        assert_eq!(corpus.lookup("BETA"), ["b1"]);
        assert_eq!(corpus.lookup("gamma"), ["g1", "g2"]);
        assert!(StaticCorpus::parse("no separator here").is_err());
    }

    #[test]
    fn static_provider_is_deterministic() {
        let (doc, pi) = productivity_doc();
        let c = StaticCorpus::builtin();
        let a = suggest_subattributes(&c, &doc, pi, 5).unwrap();
        let b = suggest_subattributes(&c, &doc, pi, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn accept_then_remove() {
        let (mut doc, pi) = productivity_doc();
        let before = doc.tree.clone();
        let id = accept_suggestion(&mut doc, pi, "workload").unwrap();
        assert!(doc.tree.is_primitive(id));
        assert!(accept_suggestion(&mut doc, pi, "workload").is_err());
        ops::remove_node(&mut doc, id).unwrap();
        let mut after = doc.tree.clone();
        after.next_id = before.next_id;
        assert_eq!(after, before);
    }

    #[test]
    fn completion_parsing() {
        assert_eq!(
            parse_completion("- a\n2. b\n\n* c\n").unwrap(),
            ["a", "b", "c"]
        );
        assert_eq!(parse_completion("[\"x\", \"y\"]").unwrap(), ["x", "y"]);
        assert_eq!(parse_completion("").unwrap(), Vec::<String>::new());
        assert!(parse_completion("[1, 2").is_err());
    }

    /// Serves one canned HTTP response and returns the request it saw.
    fn one_shot_server(
        status: &'static str,
        body: &'static str,
    ) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/complete", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut body_in = vec![0u8; len];
            reader.read_exact(&mut body_in).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status}\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            head + &String::from_utf8(body_in).unwrap()
        });
        (url, handle)
    }

    #[test]
    fn remote_provider_round_trip() {
        let (url, server) = one_shot_server("200 OK", "1. team collaboration\n2. commute\n");
        std::env::set_var("VALTREE_TEST_TOKEN_A", "sekrit");
        let provider = RemoteCompletion {
            endpoint: url,
            token_env: Some("VALTREE_TEST_TOKEN_A".into()),
            timeout: Duration::from_secs(5),
        };
        let (doc, pi) = productivity_doc();
        let got = suggest_subattributes(&provider, &doc, pi, 5).unwrap();
        assert_eq!(got, ["team collaboration", "commute"]);
        let seen = server.join().unwrap();
        assert!(
            seen.contains("authorization: Bearer sekrit")
                || seen.contains("Authorization: Bearer sekrit")
        );
        assert!(seen.contains("Decision goal: which day of the week"));
        assert!(seen.contains("Focus attribute: Scoring potential remote workdays for team members / Productivity impact"));
    }

    #[test]
    fn remote_provider_errors_are_distinct() {
        let (url, server) = one_shot_server("500 Internal Server Error", "boom");
        let provider = RemoteCompletion {
            endpoint: url,
            token_env: None,
            timeout: Duration::from_secs(5),
        };
        let (doc, pi) = productivity_doc();
        let err = suggest_subattributes(&provider, &doc, pi, 5).unwrap_err();
        assert_eq!(err, Error::Provider(ProviderError::Status(500)));
        server.join().unwrap();

        // nothing listens on a freshly closed port
        let port = TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let provider = RemoteCompletion {
            endpoint: format!("http://127.0.0.1:{port}/"),
            token_env: None,
            timeout: Duration::from_secs(2),
        };
        let err = suggest_subattributes(&provider, &doc, pi, 5).unwrap_err();
        assert!(
            matches!(err, Error::Provider(ProviderError::Unreachable(_))),
            "{err:?}"
        );

        let (url, server) = one_shot_server("200 OK", "");
        let provider = RemoteCompletion {
            endpoint: url,
            token_env: None,
            timeout: Duration::from_secs(5),
        };
        assert_eq!(
            suggest_subattributes(&provider, &doc, pi, 5).unwrap(),
            Vec::<String>::new()
        );
        server.join().unwrap();
    }

    #[test]
    fn remote_provider_timeout() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        let hold = std::thread::spawn(move || {
            let (s, _) = listener.accept().unwrap();
            std::thread::sleep(Duration::from_millis(800));
            drop(s);
        });
        let provider = RemoteCompletion {
            endpoint: url,
            token_env: None,
            timeout: Duration::from_millis(200),
        };
        let (doc, pi) = productivity_doc();
        let err = suggest_subattributes(&provider, &doc, pi, 5).unwrap_err();
        assert!(
            matches!(err, Error::Provider(ProviderError::Timeout(_))),
            "{err:?}"
        );
        hold.join().unwrap();
    }
}

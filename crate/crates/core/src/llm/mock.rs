use std::path::Path;
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::builtin;
use super::{ChatProvider, CompletionRequest, OutputConstraint, ProviderError};

/// Which prompts a rule answers. Matching looks at the last message only.
#[derive(Debug, Clone)]
pub enum Matcher {
    Any,
    Contains(String),
    Regex(Regex),
}

impl Matcher {
    fn matches(&self, text: &str) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::Contains(s) => text.contains(s.as_str()),
            Matcher::Regex(r) => r.is_match(text),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    Text(String),
    Transport,
    Auth,
    Refusal,
}

/// A matcher plus the replies it hands out in order. The last reply repeats
/// once the list is used up.
#[derive(Debug, Clone)]
pub struct MockRule {
    pub matcher: Matcher,
    pub replies: Vec<MockReply>,
}

impl MockRule {
    pub fn new(matcher: Matcher, replies: Vec<MockReply>) -> Self {
        assert!(!replies.is_empty(), "a mock rule needs at least one reply");
        Self { matcher, replies }
    }

    pub fn contains(needle: &str, replies: &[&str]) -> Self {
        Self::new(
            Matcher::Contains(needle.to_string()),
            replies
                .iter()
                .map(|r| MockReply::Text(r.to_string()))
                .collect(),
        )
    }
}

/// File form of a mock configuration.
///
/// ```json
/// {"seed": 7, "rules": [
///   {"match": {"contains": "What should we set"}, "replies": ["yes", {"error": "auth"}]}
/// ]}
/// ```
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
    /// Fall back to the built-in responder when no rule matches.
    #[serde(default = "yes")]
    pub builtin: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleSpec {
    #[serde(rename = "match")]
    pub matcher: MatchSpec,
    pub replies: Vec<ReplySpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchSpec {
    Any,
    Contains(String),
    Regex(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReplySpec {
    Text(String),
    Error { error: String },
}

impl MockScript {
    pub fn from_path(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn into_provider(self) -> Result<MockProvider, String> {
        let mut rules = Vec::new();
        for spec in self.rules {
            let matcher = match spec.matcher {
                MatchSpec::Any => Matcher::Any,
                MatchSpec::Contains(s) => Matcher::Contains(s),
                MatchSpec::Regex(r) => {
                    Matcher::Regex(Regex::new(&r).map_err(|e| format!("bad regex `{r}`: {e}"))?)
                }
            };
            if spec.replies.is_empty() {
                return Err("a mock rule needs at least one reply".into());
            }
            let replies = spec
                .replies
                .into_iter()
                .map(|r| match r {
                    ReplySpec::Text(t) => Ok(MockReply::Text(t)),
                    ReplySpec::Error { error } => match error.as_str() {
                        "transport" => Ok(MockReply::Transport),
                        "auth" => Ok(MockReply::Auth),
                        "refusal" => Ok(MockReply::Refusal),
                        other => Err(format!("unknown mock error `{other}`")),
                    },
                })
                .collect::<Result<Vec<_>, _>>()?;
            rules.push(MockRule::new(matcher, replies));
        }
        let mut provider = MockProvider::new(rules).with_seed(self.seed);
        if !self.builtin {
            provider = provider.without_builtin();
        }
        Ok(provider)
    }
}

/// Deterministic provider for tests and offline runs.
///
/// Scripted rules are tried in order; the first whose matcher accepts the
/// last message answers. Without a match the built-in responder, which
/// recognizes every prompt this crate sends, produces a plausible reply.
#[derive(Debug)]
pub struct MockProvider {
    rules: Vec<MockRule>,
    cursors: Mutex<Vec<usize>>,
    builtin: bool,
    seed: u64,
    structured: bool,
}

impl MockProvider {
    pub fn new(rules: Vec<MockRule>) -> Self {
        let n = rules.len();
        Self {
            rules,
            cursors: Mutex::new(vec![0; n]),
            builtin: true,
            seed: 0,
            structured: true,
        }
    }

    /// Only the built-in responder.
    pub fn builtin(seed: u64) -> Self {
        Self::new(Vec::new()).with_seed(seed)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn without_builtin(mut self) -> Self {
        self.builtin = false;
        self
    }

    /// Report no structured-output support, so the gateway validates and
    /// regenerates instead.
    pub fn without_structured_output(mut self) -> Self {
        self.structured = false;
        self
    }
}

impl ChatProvider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn supports_structured_output(&self) -> bool {
        self.structured
    }

    fn send(
        &self,
        req: &CompletionRequest,
        format: Option<&OutputConstraint>,
    ) -> Result<String, ProviderError> {
        let last = req
            .messages
            .last()
            .map(|m| m.content.as_str())
            .unwrap_or("");
        if let Some(i) = self.rules.iter().position(|r| r.matcher.matches(last)) {
            let reply = {
                let mut cursors = self.cursors.lock().expect("mock lock");
                let rule = &self.rules[i];
                let at = cursors[i].min(rule.replies.len() - 1);
                cursors[i] += 1;
                rule.replies[at].clone()
            };
            return match reply {
                MockReply::Text(t) => Ok(t),
                MockReply::Transport => Err(ProviderError::Transport(
                    "scripted transport failure".into(),
                )),
                MockReply::Auth => Err(ProviderError::Auth("scripted auth failure".into())),
                MockReply::Refusal => Err(ProviderError::Refusal("scripted refusal".into())),
            };
        }
        if self.builtin {
            Ok(builtin::respond(req, format, self.seed))
        } else {
            Err(ProviderError::Refusal(
                "no scripted reply matches this prompt".into(),
            ))
        }
    }
}

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{estimate_tokens, CallTag, ChatRequest, Completion, GatewayError, LlmClient};

/// Fallback rule: matches when the tag agrees (if given) and the user prompt
/// contains every listed substring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<CallTag>,
    #[serde(default)]
    pub contains: Vec<String>,
    pub reply: String,
}

/// Scripted replies. Lookup order: exact prompt hash, then the first
/// matching rule, then the per-tag default.
///
/// A bare JSON object of `hash -> reply` is also accepted on load.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub replies: BTreeMap<String, String>,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub defaults: BTreeMap<CallTag, String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScenarioFile {
    Full(Scenario),
    Bare(BTreeMap<String, String>),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(match serde_json::from_str::<ScenarioFile>(text)? {
            ScenarioFile::Full(s) => s,
            ScenarioFile::Bare(replies) => Scenario {
                replies,
                ..Default::default()
            },
        })
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(std::io::Error::other)
    }

    pub fn script(&mut self, req: &ChatRequest, reply: impl Into<String>) -> &mut Self {
        self.replies.insert(req.prompt_hash(), reply.into());
        self
    }

    pub fn rule(&mut self, tag: Option<CallTag>, contains: &[&str], reply: impl Into<String>) -> &mut Self {
        self.rules.push(MockRule {
            tag,
            contains: contains.iter().map(|s| s.to_string()).collect(),
            reply: reply.into(),
        });
        self
    }

    pub fn default_reply(&mut self, tag: CallTag, reply: impl Into<String>) -> &mut Self {
        self.defaults.insert(tag, reply.into());
        self
    }

    pub fn lookup(&self, req: &ChatRequest) -> Option<&str> {
        if let Some(r) = self.replies.get(&req.prompt_hash()) {
            return Some(r);
        }
        self.rules
            .iter()
            .find(|rule| {
                rule.tag.is_none_or(|t| t == req.tag)
                    && rule.contains.iter().all(|c| req.user.contains(c.as_str()))
            })
            .map(|r| r.reply.as_str())
            .or_else(|| self.defaults.get(&req.tag).map(String::as_str))
    }
}

/// Deterministic test double: identical request, identical reply.
#[derive(Debug, Clone, Default)]
pub struct MockClient {
    scenario: Scenario,
}

impl MockClient {
    pub fn new(scenario: Scenario) -> Self {
        Self { scenario }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }
}

impl LlmClient for MockClient {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        match self.scenario.lookup(req) {
            Some(text) => Ok(Completion {
                text: text.to_string(),
                prompt_tokens: estimate_tokens(&req.system) + estimate_tokens(&req.user),
                completion_tokens: estimate_tokens(text),
            }),
            None => Err(GatewayError::NoScriptedReply {
                hash: req.prompt_hash(),
                tag: req.tag,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_reply_by_hash() {
        let req = ChatRequest::new(CallTag::Extract, "sys", "chunk text");
        let mut sc = Scenario::default();
        sc.script(&req, "[]");
        let client = MockClient::new(sc);
        assert_eq!(client.complete(&req).unwrap().text, "[]");
        assert_eq!(client.complete(&req).unwrap().text, "[]");
        let other = ChatRequest::new(CallTag::Extract, "sys", "other");
        assert!(matches!(client.complete(&other), Err(GatewayError::NoScriptedReply { .. })));
    }

    #[test]
    fn rules_then_defaults() {
        let mut sc = Scenario::default();
        sc.rule(Some(CallTag::Feedback), &["(甲, locatedIn, 乙)"], "reject")
            .default_reply(CallTag::Feedback, "{}");
        let c = MockClient::new(sc);
        let hit = ChatRequest::new(CallTag::Feedback, "s", "Original Triple: (甲, locatedIn, 乙)");
        let miss = ChatRequest::new(CallTag::Feedback, "s", "Original Triple: (丙, locatedIn, 乙)");
        assert_eq!(c.complete(&hit).unwrap().text, "reject");
        assert_eq!(c.complete(&miss).unwrap().text, "{}");
        let wrong_tag = ChatRequest::new(CallTag::Remap, "s", "(甲, locatedIn, 乙)");
        assert!(c.complete(&wrong_tag).is_err());
    }

    #[test]
    fn bare_map_and_full_form_parse() {
        let bare = Scenario::from_json(r#"{"0123456789abcdef": "reply"}"#).unwrap();
        assert_eq!(bare.replies["0123456789abcdef"], "reply");
        let full = Scenario::from_json(r#"{"replies": {}, "defaults": {"remap": "none"}}"#).unwrap();
        assert_eq!(full.defaults[&CallTag::Remap], "none");
        let round = Scenario::from_json(&serde_json::to_string(&full).unwrap()).unwrap();
        assert_eq!(round, full);
    }
}

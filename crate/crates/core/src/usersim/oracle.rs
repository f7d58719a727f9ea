use std::sync::LazyLock;

use regex::Regex;

use super::{label, ProfileFacts};

/// The oracle's reply when a question is beyond what it parses.
pub const CANNOT_ANSWER: &str = "I cannot answer that";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleAnswer {
    Value(String),
    CannotAnswer,
}

impl OracleAnswer {
    pub fn text(&self) -> String {
        match self {
            OracleAnswer::Value(v) => v.clone(),
            OracleAnswer::CannotAnswer => CANNOT_ANSWER.to_string(),
        }
    }
}

static THRESHOLD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"\b(under|below|younger than|less than|fewer than|over|above|older than|more than|at least|at most)\s+(?:the age of\s+)?(-?\d+(?:\.\d+)?)",
    )
    .expect("regex")
});
static PERSON: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bperson (\d+)\b").expect("regex"));

/// Words that join a second condition onto a question. Two conditions is
/// more reasoning than the oracle does.
const EXTRA_HOP: &[&str] = &[
    "who", "whose", "whom", "which", "that", "and", "both", "while", "where",
];

fn normalize(q: &str) -> String {
    let spaced: String = q
        .to_lowercase()
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '.' || c == '\'' || c == '-' {
                c
            } else {
                ' '
            }
        })
        .collect();
    let words: Vec<&str> = spaced
        .split_whitespace()
        .map(|w| w.trim_end_matches('.'))
        .filter(|w| !w.is_empty())
        .collect();
    format!(" {} ", words.join(" "))
}

fn has_word(q: &str, w: &str) -> bool {
    q.contains(&format!(" {w} "))
}

/// The longest key whose label (or raw name) appears in the question.
fn find_key<'a>(q: &str, keys: impl Iterator<Item = &'a String>) -> Option<String> {
    keys.filter(|k| has_word(q, &label(k)) || has_word(q, k))
        .max_by_key(|k| k.len())
        .cloned()
}

fn member_keys(facts: &ProfileFacts) -> Vec<String> {
    let mut keys: Vec<String> = facts
        .members
        .iter()
        .flat_map(|m| m.keys().cloned())
        .collect();
    keys.sort();
    keys.dedup();
    keys
}

fn is_yes_no(v: &str) -> bool {
    matches!(v, "yes" | "no")
}

/// Answer `question` from `facts`. Handles household size, threshold counts
/// over members, yes/no membership questions and direct lookups; anything
/// else is declined.
pub fn respond_oracle(facts: &ProfileFacts, question: &str) -> OracleAnswer {
    let q = normalize(question);
    if EXTRA_HOP.iter().any(|w| has_word(&q, w)) {
        return OracleAnswer::CannotAnswer;
    }
    let mkeys = member_keys(facts);

    if has_word(&q, "how many") || q.contains(" how many ") {
        if let Some(c) = THRESHOLD.captures(&q) {
            let Ok(limit) = c[2].parse::<f64>() else {
                return OracleAnswer::CannotAnswer;
            };
            let key = find_key(&q, mkeys.iter()).unwrap_or_else(|| "age".to_string());
            if !mkeys.contains(&key) {
                return OracleAnswer::CannotAnswer;
            }
            let op = &c[1];
            let count = facts
                .members
                .iter()
                .filter_map(|m| m.get(&key).and_then(|v| v.parse::<f64>().ok()))
                .filter(|&v| match op {
                    "under" | "below" | "younger than" | "less than" | "fewer than" => v < limit,
                    "over" | "above" | "older than" | "more than" => v > limit,
                    "at least" => v >= limit,
                    _ => v <= limit,
                })
                .count();
            return OracleAnswer::Value(count.to_string());
        }
        if has_word(&q, "children") || has_word(&q, "kids") {
            if !mkeys.iter().any(|k| k == "age") {
                return OracleAnswer::CannotAnswer;
            }
            let count = facts
                .members
                .iter()
                .filter_map(|m| m.get("age").and_then(|v| v.parse::<f64>().ok()))
                .filter(|&a| a < 18.0)
                .count();
            return OracleAnswer::Value(count.to_string());
        }
        if ["people", "members", "persons", "person", "individuals"]
            .iter()
            .any(|w| has_word(&q, w))
        {
            return OracleAnswer::Value(facts.size.to_string());
        }
    }
    if q.contains(" household size ")
        || q.contains(" size of your household ")
        || q.contains(" number of people ")
    {
        return OracleAnswer::Value(facts.size.to_string());
    }

    let mkey = find_key(&q, mkeys.iter());
    if let Some(c) = PERSON.captures(&q) {
        let i: usize = c[1].parse().unwrap_or(usize::MAX);
        let Some(key) = mkey else {
            return OracleAnswer::CannotAnswer;
        };
        return match facts.members.get(i) {
            Some(m) => m
                .get(&key)
                .map(|v| OracleAnswer::Value(v.clone()))
                .unwrap_or(OracleAnswer::CannotAnswer),
            None => OracleAnswer::Value(format!("There is no person {i} in my household.")),
        };
    }

    if let Some(key) = &mkey {
        let anyone = [
            "anyone",
            "anybody",
            "someone",
            "somebody",
            "any member",
            "any of",
        ]
        .iter()
        .any(|w| has_word(&q, w));
        let values: Vec<&String> = facts.members.iter().filter_map(|m| m.get(key)).collect();
        if anyone {
            if values.iter().all(|v| is_yes_no(v)) && !values.is_empty() {
                let any = values.iter().any(|v| v.as_str() == "yes");
                return OracleAnswer::Value(if any { "yes" } else { "no" }.into());
            }
            // "is anyone employed?" against a choice value
            if let Some(hit) = values.iter().find(|v| has_word(&q, &v.to_lowercase())) {
                return OracleAnswer::Value(format!("yes, {hit}"));
            }
            return OracleAnswer::CannotAnswer;
        }
        if has_word(&q, "you") || has_word(&q, "your") || facts.members.len() == 1 {
            return facts
                .members
                .first()
                .and_then(|m| m.get(key))
                .map(|v| OracleAnswer::Value(v.clone()))
                .unwrap_or(OracleAnswer::CannotAnswer);
        }
    }

    if let Some(key) = find_key(&q, facts.household.keys()) {
        return OracleAnswer::Value(facts.household[&key].clone());
    }
    OracleAnswer::CannotAnswer
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    fn facts() -> ProfileFacts {
        let m = |age: &str, foster: &str| {
            BTreeMap::from([
                ("age".to_string(), age.to_string()),
                ("in_foster_care".to_string(), foster.to_string()),
            ])
        };
        ProfileFacts {
            size: 2,
            members: vec![m("3", "no"), m("7", "yes")],
            household: BTreeMap::from([("monthly_rent".to_string(), "900".to_string())]),
        }
    }

    fn ask(q: &str) -> String {
        respond_oracle(&facts(), q).text()
    }

    #[test]
    fn direct_lookup() {
        assert_eq!(ask("What is the age of person 1?"), "7");
        assert_eq!(ask("What is the in foster care of person 0?"), "no");
        assert_eq!(ask("What is your household's monthly rent?"), "900");
    }

    #[test]
    fn counts_and_size() {
        assert_eq!(
            ask("How many children do you have under the age of 5?"),
            "1"
        );
        assert_eq!(ask("How many people are over 2?"), "2");
        assert_eq!(
            ask("How many people live in your household, including you?"),
            "2"
        );
    }

    #[test]
    fn membership() {
        assert_eq!(ask("Is anyone in your household in foster care?"), "yes");
    }

    #[test]
    fn declines_extra_hops_and_unknowns() {
        assert_eq!(
            ask("How many children under 5 have a parent who is in foster care?"),
            CANNOT_ANSWER
        );
        assert_eq!(ask("What is your favourite colour?"), CANNOT_ANSWER);
        assert_eq!(ask("What is the income of person 0?"), CANNOT_ANSWER);
    }
}

//! Stateless stand-in for a real model. Recognizes each prompt this crate
//! sends by its fixed wording and produces a reply of the right shape, so
//! full pipelines run offline and deterministically.

use std::sync::LazyLock;

use regex::Regex;

use super::{CompletionRequest, OutputConstraint, Role};
use crate::features::{normalize_choice, HOUSEHOLD_SIZE_KEY};

static ARRAY_LEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"boolean array of length (\d+)").expect("regex"));
static KEY_ERROR_KEY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"We need to determine what value of (.+?) should be stored").expect("regex")
});
static DICT_KEY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"^hh(?:\[(\d+)\])?\["([^"]+)"\]$"#).expect("regex"));
static COMPARED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?:==|!=)\s*"([^"]*)"|"([^"]*)"\s*(?:==|!=)"#).expect("regex"));
static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"-?\$?\d[\d,]*(?:\.\d+)?").expect("regex"));

const CANNED_QUESTIONS: &[&str] = &[
    "How many people live in your household, including you?",
    "What is the age of person 0?",
    "What is the annual income of person 0?",
    "Is anyone in your household currently employed?",
    "Does anyone in your household have a disability?",
];

const NUMBER_WORDS: &[&str] = &[
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve",
];

pub(crate) fn respond(
    req: &CompletionRequest,
    format: Option<&OutputConstraint>,
    seed: u64,
) -> String {
    let prompt = req
        .messages
        .last()
        .map(|m| m.content.as_str())
        .unwrap_or("");
    let asked = req
        .messages
        .iter()
        .filter(|m| m.role == Role::Assistant)
        .count();

    if let Some(system) = req
        .messages
        .iter()
        .find(|m| m.role == Role::System && m.content.contains("Here is your profile:"))
    {
        return simulated_user(&system.content, prompt);
    }
    if prompt.contains("Write a python function called `check_eligibility`") {
        return "return false".to_string();
    }
    if prompt.contains("Return ONLY int, float, or choice.") {
        return infer_type(prompt);
    }
    if prompt.contains("Return ONLY the list of possible values") {
        return list_values(prompt);
    }
    if prompt.contains("What should we set as the value of") {
        return extract(prompt, format);
    }
    if prompt.contains("Ask a question to the user that would get this value") {
        return key_question(prompt);
    }
    if prompt.starts_with("Reasoning:") {
        if let Some(n) = array_len(prompt) {
            return bool_array(n, seed, req);
        }
        let reasoning = prompt.split("\n\nUsing the reasoning").next().unwrap_or("");
        return if reasoning
            .trim_end()
            .trim_end_matches('.')
            .trim_end()
            .ends_with("True")
        {
            "True".into()
        } else {
            "False".into()
        };
    }
    if prompt.contains("Then answer with True or False.") {
        let verdict = if asked >= 2 { "True" } else { "False" };
        return format!("{asked} questions have been answered so far. {verdict}");
    }
    if prompt.contains("Answer only in one word True or False") {
        return if asked >= 2 {
            "True".into()
        } else {
            "False".into()
        };
    }
    if let Some(n) = array_len(prompt) {
        let array = bool_array(n, seed, req);
        if prompt.contains("Think through your reasoning out loud") {
            return format!("Based on the answers so far, my best guess is {array}");
        }
        return array;
    }
    if prompt.contains("state your question after a colon") {
        let q = CANNED_QUESTIONS[asked % CANNED_QUESTIONS.len()];
        return format!("I still need to learn about the household. Question: {q}");
    }
    if prompt.contains("Ask a clarifying question") {
        return CANNED_QUESTIONS[asked % CANNED_QUESTIONS.len()].to_string();
    }
    "I don't know.".to_string()
}

fn array_len(prompt: &str) -> Option<usize> {
    ARRAY_LEN.captures(prompt).and_then(|c| c[1].parse().ok())
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn bool_array(n: usize, seed: u64, req: &CompletionRequest) -> String {
    let mut h = fnv1a(req.transcript_text().as_bytes(), seed);
    let items: Vec<&str> = (0..n)
        .map(|_| {
            h = splitmix(h);
            if h & 1 == 1 {
                "true"
            } else {
                "false"
            }
        })
        .collect();
    format!("[{}]", items.join(", "))
}

/// Text between `start` and the next blank line.
fn section<'a>(prompt: &'a str, start: &str) -> &'a str {
    prompt
        .split_once(start)
        .map(|(_, rest)| rest.split("\n\n").next().unwrap_or(rest))
        .unwrap_or("")
        .trim()
}

fn bare_key(key_text: &str) -> String {
    DICT_KEY
        .captures(key_text.trim())
        .map(|c| c[2].to_string())
        .unwrap_or_else(|| key_text.trim().to_string())
}

/// Code lines that read `key`.
fn lines_reading<'a>(code: &'a str, key: &str) -> Vec<&'a str> {
    let needle = format!("[\"{key}\"]");
    code.lines().filter(|l| l.contains(&needle)).collect()
}

fn code_section(prompt: &str) -> &str {
    prompt
        .split_once("Code:\n")
        .and_then(|(_, rest)| rest.split_once("\n\nTarget key:"))
        .map(|(code, _)| code)
        .unwrap_or("")
}

fn compared_literals(lines: &[&str]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in lines {
        for c in COMPARED.captures_iter(line) {
            let lit = c
                .get(1)
                .or_else(|| c.get(2))
                .map(|m| m.as_str().to_string());
            if let Some(lit) = lit {
                if !out.contains(&lit) {
                    out.push(lit);
                }
            }
        }
    }
    out
}

fn infer_type(prompt: &str) -> String {
    let key = bare_key(section(prompt, "Target key:\n"));
    let code = code_section(prompt);
    let lines = lines_reading(code, &key);
    if !compared_literals(&lines).is_empty() {
        return "choice".into();
    }
    let money = [
        "income", "amount", "rent", "wage", "cost", "salary", "earn", "pay", "expense", "price",
        "savings", "assets",
    ];
    let has_decimal = lines
        .iter()
        .any(|l| NUMBER.find_iter(l).any(|m| m.as_str().contains('.')));
    if has_decimal || money.iter().any(|m| key.contains(m)) {
        "float".into()
    } else {
        "int".into()
    }
}

fn list_values(prompt: &str) -> String {
    let key = bare_key(section(prompt, "Target key:\n"));
    let code = code_section(prompt);
    let mut values = compared_literals(&lines_reading(code, &key));
    if values.is_empty() {
        values = vec!["yes".into(), "no".into()];
    } else if values.iter().any(|v| v == "yes") && !values.iter().any(|v| v == "no") {
        values.push("no".into());
    } else if values.iter().any(|v| v == "no") && !values.iter().any(|v| v == "yes") {
        values.push("yes".into());
    }
    serde_json::to_string(&values).expect("strings serialize")
}

fn key_question(prompt: &str) -> String {
    let key = KEY_ERROR_KEY
        .captures(prompt)
        .map(|c| c[1].to_string())
        .unwrap_or_default();
    match DICT_KEY.captures(key.trim()) {
        Some(c) => {
            let label = c[2].replace('_', " ");
            match c.get(1) {
                Some(i) => format!("What is the {label} of person {}?", i.as_str()),
                None if &c[2] == HOUSEHOLD_SIZE_KEY => {
                    "How many people live in your household, including you?".into()
                }
                None => format!("What is your household's {label}?"),
            }
        }
        None => format!("What is the value of {}?", key.replace('_', " ")),
    }
}

fn answer_text(prompt: &str) -> &str {
    prompt
        .split_once("\nAnswer: ")
        .map(|(_, rest)| {
            rest.split_once("\n\nWhat should we set as the value of")
                .map(|(a, _)| a)
                .unwrap_or(rest)
        })
        .unwrap_or("")
        .trim()
}

fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

fn first_number(text: &str) -> Option<String> {
    if let Some(m) = NUMBER.find(text) {
        return Some(m.as_str().replace(['$', ','], ""));
    }
    let w = words(text);
    for word in &w {
        if let Some(n) = NUMBER_WORDS.iter().position(|n| n == word) {
            return Some(n.to_string());
        }
    }
    let lowered = text.to_lowercase();
    if ["alone", "anyone else", "just me", "only me", "by myself"]
        .iter()
        .any(|p| lowered.contains(p))
    {
        return Some("1".into());
    }
    None
}

fn extract(prompt: &str, format: Option<&OutputConstraint>) -> String {
    let answer = answer_text(prompt);
    match format {
        Some(OutputConstraint::Integer | OutputConstraint::Real) => {
            first_number(answer).unwrap_or_else(|| answer.to_string())
        }
        Some(OutputConstraint::Choice { choices }) => {
            let lowered = format!(" {} ", words(answer).join(" "));
            let mut by_len: Vec<&String> = choices.iter().collect();
            by_len.sort_by_key(|c| std::cmp::Reverse(c.len()));
            if let Some(hit) = by_len
                .iter()
                .find(|c| lowered.contains(&format!(" {} ", normalize_choice(c))))
            {
                return (*hit).clone();
            }
            let has = |c: &str| choices.iter().any(|x| normalize_choice(x) == c);
            let unsure = [
                "cannot answer",
                "don't know",
                "do not know",
                "not sure",
                "no idea",
            ]
            .iter()
            .any(|p| lowered.contains(p));
            if has("yes") && has("no") && !unsure {
                let negated = lowered.contains(" not ")
                    || lowered.contains("n't")
                    || lowered.contains(" never ")
                    || lowered.contains(" nope ");
                return if negated { "no".into() } else { "yes".into() };
            }
            answer.to_string()
        }
        _ => answer.trim_end_matches('.').to_string(),
    }
}

fn simulated_user(system: &str, question: &str) -> String {
    let profile = system
        .split_once("Here is your profile:\n\n")
        .map(|(_, rest)| {
            rest.split_once("\n\nAnswer each question")
                .map(|(p, _)| p)
                .unwrap_or(rest)
        })
        .unwrap_or("");
    crate::usersim::answer_from_rendered(profile, question)
}

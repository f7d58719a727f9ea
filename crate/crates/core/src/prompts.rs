//! Prompt templates. Placeholders use `{name}` and are filled by [`fill`].
//!
//! The baseline, synthesis and dialog templates are kept word for word; the
//! few prompts marked as ours have no published counterpart.

use crate::features::KeyPath;

pub const READY: &str = "Eligibility requirements: {eligibility_requirements}. \n\nIs the information sufficient to determine whether any member of the user's household is eligible for all programs? Answer only in one word True or False.";

pub const PREDICT: &str = "Eligibility: {eligibility_requirements}. \n\nPredict the programs for which any member of the user's household is eligible. Return only a boolean array of length {num_programs}, e.g. {example_array}, where the value at index `i` is true iff the user is eligible for program `i`. Only return the array. Do not return anything else in the response. If a user's eligibility is unclear, make your best guess.";

pub const ASK: &str = "Eligibility: {eligibility_requirements}. \n\nAsk a clarifying question that will help you determine if any member of the user's household is eligible for benefits as efficiently as possible. Only ask about one fact at a time.";

pub const COT_READY: &str = "Eligibility requirements: {eligibility_requirements}. \n\nIs the information sufficient to determine whether any member of the user's household is eligible for all programs? Think through your reasoning out loud. Then answer with True or False.";

pub const COT_PREDICT_REASONING: &str = "Eligibility: {eligibility_requirements}. \n\nPredict the programs for which any member of the user's household is eligible. Return only a boolean array of length {num_programs}, e.g. {example_array}, where the value at index `i` is true iff the user is eligible for program `i`. Only return the array. Do not return anything else in the response. If a user's eligibility is unclear, make your best guess. Think through your reasoning out loud.";

pub const COT_PREDICT_CONSTRAINED: &str = "Reasoning: {reasoning}. \n\nUsing the reasoning above, predict the programs for which any member of the user's household is eligible. Output a boolean array of length {num_programs}, e.g. {example_array}, where the value at index `i` is true iff the user is eligible for program `i`. If a user's eligibility is unclear, make your best guess.";

/// Ours: the second, constrained pass of the ReAct readiness check.
pub const COT_READY_CONSTRAINED: &str = "Reasoning: {reasoning}. \n\nUsing the reasoning above, is the information sufficient to determine whether any member of the user's household is eligible for all programs? Answer only in one word True or False.";

pub const REACT_ASK: &str = "Eligibility: {eligibility_requirements}. \n\nAsk a clarifying question that will help you determine if any member of the user's household is eligible for benefits as efficiently as possible. Only ask about one fact at a time. Think through your reasoning out loud, then state your question after a colon, e.g. Question: What is the user's age?";

pub const GENERATE_CHECKER: &str = "{attempt_no}\n\nEligibility Requirements:\n{eligibility_requirement}\n\nWrite a python function called `check_eligibility` that takes a dictionary `hh` containing relevant information and determines user eligibility. `hh` is a special dictionary connected to a language model that is conversing with the user. Any time it does not contain a key, it will determine that information from the user. As a result here are some requirements for interacting with `hh`:\n\n- DO NOT use `dict.get()` anywhere in the code. Key errors will be handled elsewhere.\n- Do not use default values.\n- Do not use any f-strings, curly brackets, or dynamically generated strings in your keys.\n- Use only literal strings in keys.\n- Do not use try-except blocks.\n- If you need to access data for individuals (rather than the household as a whole) you can use integer indexing. `hh[0]` is the head of the household.\n\n`check_eligibility` returns a bool. All keys and values of `hh` are strings. If you write helper functions, keep them inside the `check_eligibility` function. Make your code as detailed as possible capturing every edge case. Remember that the household may have no relevant members, so be sure to ask about the composition of the household. For example, for childcare programs, check that the household has at least one child. After each new lookup in `hh`, write a comment suggesting a question to ask.\n\nThe following is a set of preexisting keys and values in the `hh` dictionary; take care not to duplicate them.\n\n{preexisting_keys}\n\nAvoid using `int()` and use `float()` instead. Do not provide anything besides code in your response. Do not use `input` for user input.";

/// Ours: appended to [`GENERATE_CHECKER`] so the emission is machine-checkable.
pub const CHECKER_GRAMMAR: &str = "Write the function body in the following restricted rule language instead of full Python; the output must conform to it exactly. Statements: `if <condition> { ... } else { ... }` (`else if` is allowed, `else` is optional), `return <expression>`, `let <name> = <expression>`, `<name> = <expression>`, and `for member in household { ... }`, which visits every member of the household in turn. Expressions: a single comparison (<, <=, ==, !=, >=, >) between arithmetic terms (+, -, *, /), numbers, true/false, \"strings\", `hh[\"key\"]` for household facts, `hh[0][\"key\"]` for a fixed member, and `member[\"key\"]` inside a member loop. `hh[\"size\"]` is the number of people in the household. There are no `and`, `or` or `not` operators: express a conjunction with nested `if` statements and a negation with `== false` or `!=`. Every path must end in a `return`. Comments start with `#`.";

/// Ours: added to a retry after the previous emission failed to parse.
pub const CHECKER_RETRY: &str = "The previous attempt could not be used because it does not conform to the rule language: {error}\n\nPrevious attempt:\n{previous}";

pub const GET_TYPE: &str = "Context:\n{eligibility_requirements}\n\nCode:\n{code}\n\nTarget key:\n{key}\n\nQuestion: Given the code and context above, what do you expect {key} to be an integer, a float, or one choice from a set of strings? Return ONLY int, float, or choice.";

pub const GET_VALUES: &str = "Context:\n{eligibility_requirements}\n\nCode:\n{code}\n\nTarget key:\n{key}\n\nQuestion: Given the code and context above, what are the possible values of {key}? Return ONLY the list of possible values in a list of strings. For example, return [\"a\", \"b\", \"c\"].";

pub const EXTRACT_VALUE: &str = "Context:\n{eligibility_requirements}\n\nLine:\n```{line}```\n\nWe need to extract the value of {key} from the following dialog:\n\nQuestion: {cq}\nAnswer: {answer}\n\nWhat should we set as the value of {key}? Return ONLY the value.";

pub const KEY_ERROR: &str = "Context:\n{eligibility_requirements}\n\nLine:\n```{line}```\n\nWe need to determine what value of {key} should be stored in the `hh` dictionary. Ask a question to the user that would get this value. For example, for `age_i`, ask \"What is the age of person i?\". Return ONLY the question.";

/// Ours: system prompt for the language-model simulated user.
pub const USER_SIM: &str = "You are answering an assistant's questions about yourself and your household. Here is your profile:\n\n{profile}\n\nAnswer each question truthfully and briefly, using only the profile. If the profile does not contain the answer, reply \"I cannot answer that\".";

/// Ours: the deterministic re-ask issued by the clarification loop.
pub const CLARIFY: &str = "Sorry, I could not understand that answer ({reason}). {question}";

/// Replace each `{name}` with its value. Values are inserted verbatim and
/// are not themselves scanned for placeholders.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let name_end = after.find('}');
        let value = name_end.and_then(|end| {
            let name = &after[..end];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (*v, end))
        });
        match value {
            Some((v, end)) => {
                out.push_str(v);
                rest = &after[end + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// `[true, false, true, ...]` of length `n`, as shown in predict prompts.
pub fn example_array(n: usize) -> String {
    let items: Vec<&str> = (0..n)
        .map(|i| if i % 2 == 0 { "true" } else { "false" })
        .collect();
    format!("[{}]", items.join(", "))
}

/// How a key is shown to the model: in the dictionary syntax checkers use.
pub fn key_text(key: &KeyPath) -> String {
    key.to_dict_syntax()
}

pub fn ready(requirements: &str) -> String {
    fill(READY, &[("eligibility_requirements", requirements)])
}

pub fn predict(requirements: &str, n: usize) -> String {
    fill(
        PREDICT,
        &[
            ("eligibility_requirements", requirements),
            ("num_programs", &n.to_string()),
            ("example_array", &example_array(n)),
        ],
    )
}

pub fn ask(requirements: &str) -> String {
    fill(ASK, &[("eligibility_requirements", requirements)])
}

pub fn cot_ready(requirements: &str) -> String {
    fill(COT_READY, &[("eligibility_requirements", requirements)])
}

pub fn cot_ready_constrained(reasoning: &str) -> String {
    fill(COT_READY_CONSTRAINED, &[("reasoning", reasoning)])
}

pub fn cot_predict_reasoning(requirements: &str, n: usize) -> String {
    fill(
        COT_PREDICT_REASONING,
        &[
            ("eligibility_requirements", requirements),
            ("num_programs", &n.to_string()),
            ("example_array", &example_array(n)),
        ],
    )
}

pub fn cot_predict_constrained(reasoning: &str, n: usize) -> String {
    fill(
        COT_PREDICT_CONSTRAINED,
        &[
            ("reasoning", reasoning),
            ("num_programs", &n.to_string()),
            ("example_array", &example_array(n)),
        ],
    )
}

pub fn react_ask(requirements: &str) -> String {
    fill(REACT_ASK, &[("eligibility_requirements", requirements)])
}

/// The checker-generation prompt for one attempt (1-based). `retry` carries
/// the previous emission and its parse error.
pub fn generate_checker(
    requirements: &str,
    preexisting_keys: &str,
    attempt: u32,
    retry: Option<(&str, &str)>,
) -> String {
    let mut prompt = fill(
        GENERATE_CHECKER,
        &[
            ("attempt_no", &format!("Attempt number: {attempt}")),
            ("eligibility_requirement", requirements),
            ("preexisting_keys", preexisting_keys),
        ],
    );
    prompt.push_str("\n\n");
    prompt.push_str(CHECKER_GRAMMAR);
    if let Some((previous, error)) = retry {
        prompt.push_str("\n\n");
        prompt.push_str(&fill(
            CHECKER_RETRY,
            &[("error", error), ("previous", previous)],
        ));
    }
    prompt
}

pub fn get_type(requirements: &str, code: &str, key: &str) -> String {
    fill(
        GET_TYPE,
        &[
            ("eligibility_requirements", requirements),
            ("code", code),
            ("key", key),
        ],
    )
}

pub fn get_values(requirements: &str, code: &str, key: &str) -> String {
    fill(
        GET_VALUES,
        &[
            ("eligibility_requirements", requirements),
            ("code", code),
            ("key", key),
        ],
    )
}

pub fn extract_value(
    requirements: &str,
    line: &str,
    key: &str,
    question: &str,
    answer: &str,
) -> String {
    fill(
        EXTRACT_VALUE,
        &[
            ("eligibility_requirements", requirements),
            ("line", line),
            ("key", key),
            ("cq", question),
            ("answer", answer),
        ],
    )
}

pub fn key_error(requirements: &str, line: &str, key: &str) -> String {
    fill(
        KEY_ERROR,
        &[
            ("eligibility_requirements", requirements),
            ("line", line),
            ("key", key),
        ],
    )
}

pub fn user_sim(profile: &str) -> String {
    fill(USER_SIM, &[("profile", profile)])
}

pub fn clarify(question: &str, reason: &str) -> String {
    fill(CLARIFY, &[("question", question), ("reason", reason)])
}

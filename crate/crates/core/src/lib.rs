pub mod baseline;
pub mod bench;
pub mod corpus;
pub mod dialog;
pub mod features;
pub mod llm;
pub mod prompts;
pub mod rules;
pub mod service;
pub mod synthesis;
pub mod usersim;

//! Automated evidence generation for text-to-SQL.
//!
//! A question is split into clauses ([`breakup`]), each clause is explored
//! against the database through an atomic [`toolbox`] inside a
//! [`cotf::CotfDocument`] workspace ([`lookup`]), and the verified facts are
//! written up as long or concise evidence ([`evidence`]). [`eval`] holds the
//! execution-accuracy, efficiency and linking metrics.

pub mod breakup;
pub mod canonical;
pub mod cotf;
pub mod dataset;
pub mod db;
pub mod embed;
pub mod eval;
pub mod evidence;
pub mod facts;
pub mod llm;
pub mod lookup;
pub mod pipeline;
pub mod prompts;
pub mod tokenize;
pub mod toolbox;

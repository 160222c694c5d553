//! A three-question dataset over the fixture database with a replay script.
#![allow(dead_code)]

#[path = "../../../core/tests/support/mod.rs"]
pub mod support;

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
#[allow(unused_imports)]
pub use support::{reply, segmentation, stop, CountingDb, Fixture, DB_ID};

pub const Q1: &str = "Which magnet schools offer Kindergarten to 8th grade?";
pub const Q2: &str = "What is the phone number of the school with the highest average score in Math?";
pub const Q3: &str = "How many directly funded charter schools are there?";

pub fn records() -> Value {
    json!([
        {"question_id": 1, "db_id": DB_ID, "question": Q1, "evidence": "Kindergarten refers to `Low Grade` = 'K'",
         "SQL": "SELECT T1.School FROM schools AS T1 JOIN frpm AS T2 ON T1.CDSCode = T2.CDSCode WHERE T1.Magnet = 1 AND T2.`Low Grade` = 'K' AND T2.`High Grade` = '8'",
         "difficulty": "simple"},
        {"question_id": 2, "db_id": DB_ID, "question": Q2, "evidence": "",
         "SQL": "SELECT T1.Phone FROM schools AS T1 JOIN satscores AS T2 ON T1.CDSCode = T2.cds ORDER BY T2.AvgScrMath DESC LIMIT 1",
         "difficulty": "moderate"},
        {"question_id": 3, "db_id": DB_ID, "question": Q3, "evidence": "",
         "SQL": "SELECT COUNT(*) FROM frpm WHERE `Charter Funding Type` = 'Directly funded'",
         "difficulty": "simple"}
    ])
}

fn evidence_calls(long: &[&str], concise: &[&str], candidates: usize) -> Vec<String> {
    let mut out = Vec::new();
    for texts in [long, concise] {
        for i in 0..candidates {
            out.push(texts[i % (texts.len() - 1)].to_string());
        }
        if candidates > 1 {
            out.push(texts[texts.len() - 1].to_string());
        }
    }
    out
}

/// Model replies for question 1, in call order.
pub fn session_q1(candidates: usize) -> Vec<String> {
    let mut s = vec![
        segmentation(&["Which magnet schools", "offer Kindergarten to 8th grade?"]),
        reply("Magnet status is probably a flag on schools.", "uniq_value", json!({"table": "schools", "column": "Magnet"})),
        stop("Magnet = 1 marks magnet schools."),
        reply("Kindergarten is likely coded as K.", "value_in", json!({"table": "frpm", "column": "Low Grade", "value": "K"})),
        reply("8th grade is likely coded as 8.", "value_in", json!({"table": "frpm", "column": "High Grade", "value": "8"})),
        stop("Both grade codes are confirmed."),
        json!([
            {"kind": "value", "table": "frpm", "column": "Low Grade", "literal": "K", "rationale": "Kindergarten", "source_turn": [1, 0]},
            {"kind": "value", "table": "frpm", "column": "High Grade", "literal": "8", "rationale": "8th grade", "source_turn": [1, 1]},
            {"kind": "schema", "table": "schools", "column": "Magnet", "rationale": "magnet flag", "source_turn": [0, 0]}
        ])
        .to_string(),
    ];
    s.extend(evidence_calls(
        &[
            "Magnet schools are identified through `schools`.`Magnet`, which holds 0 and 1, so magnet schools have `Magnet` = 1. The lowest grade is stored in `frpm`.`Low Grade` and kindergarten is written as 'K'. The highest grade is stored in `frpm`.`High Grade`, where 8th grade appears as '8'. Join `schools` and `frpm` on `CDSCode` to combine both conditions.",
            "The question combines a magnet flag with a grade span. `schools`.`Magnet` = 1 selects magnet schools. In `frpm`, kindergarten is 'K' in `Low Grade` and 8th grade is '8' in `High Grade`, so the grade span is `Low Grade` = 'K' and `High Grade` = '8'.",
            "Magnet schools have `schools`.`Magnet` = 1. Kindergarten is stored as 'K' in `frpm`.`Low Grade` and 8th grade as '8' in `frpm`.`High Grade`. The two tables join on `CDSCode`, and the span condition is `Low Grade` = 'K' and `High Grade` = '8'.",
        ],
        &[
            "magnet schools refers to Magnet = 1; Kindergarten to 8th grade refers to `Low Grade` = 'K' and `High Grade` = '8'",
            "Magnet = 1; `Low Grade` = 'K'; `High Grade` = '8'",
            "magnet schools refers to Magnet = 1; Kindergarten to 8th grade refers to `Low Grade` = 'K' and `High Grade` = '8'",
        ],
        candidates,
    ));
    s
}

pub fn session_q2(candidates: usize) -> Vec<String> {
    let mut s = vec![
        segmentation(&["What is the phone number", "of the school with the highest average score in Math?"]),
        reply("Which column stores phone numbers?", "sim_columns", json!({"query": "phone number"})),
        stop("`schools`.`Phone` holds it."),
        reply("The math average may be AvgMath.", "uniq_value", json!({"table": "satscores", "column": "AvgMath"})),
        reply("Look at the table rows to find the exact name.", "head", json!({"table": "satscores"})),
        stop("AvgScrMath holds the math average."),
        json!([
            {"kind": "schema", "table": "schools", "column": "Phone", "rationale": "phone number"},
            {"kind": "schema", "table": "satscores", "column": "AvgScrMath", "rationale": "average score in Math"},
            {"kind": "schema", "table": "satscores", "column": "AvgMath", "rationale": "never existed"},
            {"kind": "function", "rationale": "highest means ORDER BY AvgScrMath DESC LIMIT 1"}
        ])
        .to_string(),
    ];
    s.extend(evidence_calls(
        &[
            "Phone numbers are stored in `schools`.`Phone`. The average Math score is the column `satscores`.`AvgScrMath`; a guessed column `AvgMath` does not exist. The highest score is found by ordering `AvgScrMath` in descending order and taking the first row. Join `schools`.`CDSCode` with `satscores`.`cds`.",
            "The phone number lives in `schools`.`Phone`. The average score in Math is `satscores`.`AvgScrMath`, and the school with the highest value is the first row after sorting it in descending order. The tables are linked through `cds` and `CDSCode`. The column `satscores`.`MathAverage` also stores the score.",
            "Use `schools`.`Phone` for the phone number and `satscores`.`AvgScrMath` for the average Math score. The highest average is the top row when sorting `AvgScrMath` descending. Join on `satscores`.`cds` = `schools`.`CDSCode`.",
        ],
        &[
            "phone number refers to Phone; highest average score in Math refers to MAX(AvgScrMath)",
            "Phone; MAX(AvgScrMath)",
            "phone number refers to Phone; highest average score in Math refers to MAX(AvgScrMath)",
        ],
        candidates,
    ));
    s
}

pub fn session_q3(candidates: usize) -> Vec<String> {
    let probe = json!({"table": "frpm", "column": "Charter Funding Type", "value": "directly funded"});
    let mut s = vec![
        segmentation(&[Q3]),
        reply("Funding type may be stored in lower case.", "value_in", probe.clone()),
        reply("Check again.", "value_in", probe),
        reply("Search for a similar spelling.", "sim_value_in", json!({"table": "frpm", "column": "Charter Funding Type", "value": "directly funded"})),
        reply("The stored spelling is capitalized.", "value_in", json!({"table": "frpm", "column": "Charter Funding Type", "value": "Directly funded"})),
        stop("'Directly funded' is the stored value."),
        json!([
            {"kind": "value", "table": "frpm", "column": "Charter Funding Type", "literal": "Directly funded", "rationale": "directly funded", "source_turn": [0, 3]}
        ])
        .to_string(),
    ];
    s.extend(evidence_calls(
        &[
            "Funding type is stored in `frpm`.`Charter Funding Type`. An exact probe for 'directly funded' in lower case found nothing, and a fuzzy search showed the stored spelling 'Directly funded'. Counting rows of `frpm` where `Charter Funding Type` = 'Directly funded' answers the question.",
            "Directly funded charter schools are rows of `frpm` whose `Charter Funding Type` = 'Directly funded'; the value is capitalized in the database. Count those rows.",
            "The column `frpm`.`Charter Funding Type` records how a charter school is funded, and the stored value for directly funded schools is 'Directly funded'. The answer is the number of rows with `Charter Funding Type` = 'Directly funded'.",
        ],
        &[
            "directly funded refers to `Charter Funding Type` = 'Directly funded'",
            "`Charter Funding Type` = 'Directly funded'",
            "directly funded refers to `Charter Funding Type` = 'Directly funded'",
        ],
        candidates,
    ));
    s
}

pub fn replay_script(candidates: usize) -> Value {
    json!({"sessions": {"1": session_q1(candidates), "2": session_q2(candidates), "3": session_q3(candidates)}})
}

/// Writes the dataset and the replay script next to the fixture database.
pub fn write_inputs(fx: &Fixture, candidates: usize) -> (PathBuf, PathBuf) {
    let dataset = fx.root().join("dev.json");
    let script = fx.root().join("script.json");
    std::fs::write(&dataset, serde_json::to_vec_pretty(&records()).unwrap()).unwrap();
    std::fs::write(&script, serde_json::to_vec_pretty(&replay_script(candidates)).unwrap()).unwrap();
    (dataset, script)
}

/// Every regular file under `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

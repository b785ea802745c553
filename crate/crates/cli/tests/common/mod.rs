//! Toy database, benchmark and transcripts shared by the CLI tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;

pub struct ToyItem {
    pub question: &'static str,
    pub evidence: &'static str,
    pub gold: &'static str,
    pub uqu: serde_json::Value,
    pub good_sql: &'static str,
    pub bad_sql: &'static str,
}

pub fn toy_items() -> Vec<ToyItem> {
    vec![
        ToyItem {
            question: "How many customers live in Paris?",
            evidence: "",
            gold: "SELECT COUNT(*) FROM customers WHERE city = 'Paris'",
            uqu: json!({
                "main_task": ["1. Count the customers who live in Paris"],
                "sub_task": ["1.1 filter customers by city Paris", "1.2 count them"],
                "object": ["customers", "city"],
                "implementation": [{"city": "Paris"}]
            }),
            good_sql: "SELECT count(id) FROM customers WHERE city = 'Paris'",
            bad_sql: "SELECT count(id) FROM customers WHERE city = 'Lyon'",
        },
        ToyItem {
            question: "What is the total amount of the orders placed by Alice?",
            evidence: "total amount refers to SUM(amount)",
            gold: "SELECT SUM(o.amount) FROM orders o JOIN customers c ON o.customer_id = c.id WHERE c.name = 'Alice'",
            uqu: json!({
                "main_task": ["1. Find the total order amount of Alice"],
                "sub_task": ["1.1 find the customer named Alice", "1.2 sum the amount of her orders"],
                "object": ["orders", "amount", "name"],
                "implementation": [{"name": "Alice"}]
            }),
            good_sql:
                "SELECT SUM(amount) FROM orders WHERE customer_id = (SELECT id FROM customers WHERE name = 'Alice')",
            bad_sql: "SELECT SUM(amount) FROM orders",
        },
        ToyItem {
            question: "List the names of all customers in alphabetical order.",
            evidence: "",
            gold: "SELECT name FROM customers ORDER BY name",
            uqu: json!({
                "main_task": ["1. List customer names alphabetically"],
                "sub_task": ["1.1 sort customer names"],
                "object": ["customers", "name"],
                "implementation": []
            }),
            good_sql: "SELECT name FROM customers ORDER BY name ASC",
            bad_sql: "SELECT name FROM customers ORDER BY name DESC",
        },
    ]
}

/// `<dir>/dbs/shop/shop.sqlite` with a description CSV for `customers`.
pub fn make_db_root(dir: &Path) -> PathBuf {
    let root = dir.join("dbs");
    let db_dir = root.join("shop");
    std::fs::create_dir_all(db_dir.join("database_description")).unwrap();
    let conn = rusqlite::Connection::open(db_dir.join("shop.sqlite")).unwrap();
    conn.execute_batch(
        "CREATE TABLE customers (id INTEGER PRIMARY KEY, name TEXT, city TEXT);
         CREATE TABLE orders (id INTEGER PRIMARY KEY, customer_id INTEGER REFERENCES customers(id), amount REAL);
         INSERT INTO customers VALUES (1, 'Alice', 'Paris'), (2, 'Bob', 'Lyon'), (3, 'Chloe', 'Paris'), (4, 'Dan', 'Nice');
         INSERT INTO orders VALUES (1, 1, 10.5), (2, 1, 20.25), (3, 2, 7.0), (4, 3, 3.5);",
    )
    .unwrap();
    std::fs::write(
        db_dir.join("database_description").join("customers.csv"),
        "original_column_name,column_name,column_description,data_format,value_description\n\
         id,customer id,unique customer id,integer,\n\
         city,city,city where the customer lives,text,French city names\n",
    )
    .unwrap();
    root
}

/// BIRD-layout question file.
pub fn write_benchmark(dir: &Path) -> PathBuf {
    let items: Vec<_> = toy_items()
        .iter()
        .map(|i| json!({"db_id": "shop", "question": i.question, "evidence": i.evidence, "SQL": i.gold}))
        .collect();
    let path = dir.join("dev.json");
    std::fs::write(&path, serde_json::to_string_pretty(&items).unwrap()).unwrap();
    path
}

/// Transcript answering every question; `corrupt` items get a wrong query.
pub fn write_transcript(path: &Path, corrupt: &[usize]) {
    let mut entries = Vec::new();
    for (k, item) in toy_items().iter().enumerate() {
        let pattern = regex::escape(item.question);
        entries.push(json!({"model": "uqu", "match": pattern, "responses": [item.uqu.to_string()]}));
        let sql = if corrupt.contains(&k) { item.bad_sql } else { item.good_sql };
        entries.push(json!({
            "model": "generation",
            "match": pattern,
            "responses": [format!("```sql\n{sql}\n```")]
        }));
    }
    std::fs::write(path, serde_json::to_string_pretty(&json!({"entries": entries})).unwrap()).unwrap();
}

pub fn nlsql(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlsql")).args(args).env_remove("RUST_LOG").output().expect("binary runs")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

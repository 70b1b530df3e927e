//! Fixture databases and synthetic corpora for tests and benchmarks.
//!
//! Three hand-built mini-databases cover the judging edge cases: NULLs,
//! duplicate rows, real-valued aggregates, ORDER BY semantics, hallucinated
//! identifiers, and entity-format mismatches. Row contents are fixed so
//! expected counts in tests can be checked by hand against this file.

use std::fs;
use std::path::{Path, PathBuf};

use rusqlite::Connection;

use crate::corpus::{DatasetItem, DbRoot};
use crate::executor::JudgeJob;

/// Non-terminating recursive CTE; only a timeout stops it.
pub const RUNAWAY_QUERY: &str =
    "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x+1 FROM c) SELECT count(*) FROM c";

fn create_db(path: &Path, setup: &str) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    let conn = Connection::open(path).unwrap();
    conn.execute_batch(setup).unwrap();
}

/// `molecules`: bond/molecule/atom. Exactly three '#' bonds over two
/// distinct molecules; one molecule has a NULL label.
const MOLECULES_SQL: &str = "
CREATE TABLE molecule (molecule_id TEXT PRIMARY KEY, label TEXT);
CREATE TABLE bond (
    bond_id TEXT PRIMARY KEY,
    molecule_id TEXT REFERENCES molecule(molecule_id),
    bond_type TEXT
);
CREATE TABLE atom (
    atom_id TEXT PRIMARY KEY,
    molecule_id TEXT REFERENCES molecule(molecule_id),
    element TEXT
);
INSERT INTO molecule VALUES ('TR000', '+'), ('TR001', '-'), ('TR002', '+'), ('TR060', NULL);
INSERT INTO bond VALUES
    ('b1', 'TR000', '#'), ('b2', 'TR000', '#'), ('b3', 'TR001', '#'),
    ('b4', 'TR001', '-'), ('b5', 'TR002', '='), ('b6', 'TR002', '=');
INSERT INTO atom VALUES
    ('a1', 'TR000', 'c'), ('a2', 'TR000', 'h'), ('a3', 'TR001', 'c'),
    ('a4', 'TR002', 'o'), ('a5', 'TR060', 'n');
";

/// `drivers`: every stored nationality is 'American'; three rows.
const DRIVERS_SQL: &str = "
CREATE TABLE drivers (code INTEGER PRIMARY KEY, nationality TEXT);
INSERT INTO drivers VALUES (1, 'American'), (2, 'American'), (57, 'American');
";

/// `schools`: satscores/schools/frpm with a NULL school name, duplicate
/// county values, and real-valued averages.
const SCHOOLS_SQL: &str = "
CREATE TABLE schools (
    cdscode TEXT PRIMARY KEY,
    school TEXT,
    county TEXT,
    street TEXT,
    mailstreet TEXT,
    zip TEXT
);
CREATE TABLE satscores (
    cds TEXT PRIMARY KEY REFERENCES schools(cdscode),
    sname TEXT,
    cname TEXT,
    numtsttakr INTEGER,
    avgscrmath REAL,
    avgscrread REAL,
    avgscrwrite REAL
);
CREATE TABLE frpm (
    cdscode TEXT PRIMARY KEY REFERENCES schools(cdscode),
    district_name TEXT,
    charter INTEGER
);
INSERT INTO schools VALUES
    ('s1', 'North High', 'Fresno', '1 Oak St', '1 Oak St', '93701'),
    ('s2', 'South High', 'Fresno', '2 Elm St', 'PO Box 2', '93702'),
    ('s3', 'East High', 'Alameda', '3 Bay Rd', '3 Bay Rd', '94501'),
    ('s4', 'West High', 'Alameda', '4 Hill Rd', 'PO Box 4', '94502');
INSERT INTO satscores VALUES
    ('s1', 'North High', 'Fresno', 120, 510.5, 498.25, 505.0),
    ('s2', NULL, 'Fresno', 80, 478.5, 470.0, 466.75),
    ('s3', 'East High', 'Alameda', 40, 560.25, 549.5, 551.0),
    ('s4', 'East High', 'Alameda', 65, 430.0, 441.25, 437.5);
INSERT INTO frpm VALUES
    ('s1', 'Fresno County Office of Education', 1),
    ('s2', 'Fresno Unified', 1),
    ('s3', 'Alameda Unified', 0),
    ('s4', 'Alameda Unified', 1);
";

/// `shop`: duplicate sale rows, a NULL quantity, and prices that sum to an
/// exact decimal.
const SHOP_SQL: &str = "
CREATE TABLE sales (sale_id INTEGER PRIMARY KEY, item TEXT, qty INTEGER, price REAL);
INSERT INTO sales VALUES
    (1, 'Apple', 3, 1.25),
    (2, 'Apple', 3, 1.25),
    (3, 'Pear', 1, 2.5),
    (4, 'Plum', NULL, 0.75),
    (5, 'Apple', 7, 1.25),
    (6, 'Pear', 2, 2.5);
";

/// Builds the four fixture databases under `<dir>/dbs` in the benchmark
/// layout and returns the resolver for them.
pub fn build_fixture_root(dir: &Path) -> DbRoot {
    let root = dir.join("dbs");
    for (db_id, setup) in [
        ("molecules", MOLECULES_SQL),
        ("drivers", DRIVERS_SQL),
        ("schools", SCHOOLS_SQL),
        ("shop", SHOP_SQL),
    ] {
        let path = root.join(db_id).join(format!("{db_id}.sqlite"));
        if !path.exists() {
            create_db(&path, setup);
        }
    }
    DbRoot::new(root)
}

/// Builds `count` test-suite instances of a database under `<dir>/suite`.
/// Instances share the schema but vary the stored rows, so predictions that
/// only coincide with the gold query on some data fail the suite.
pub fn build_suite_instances(dir: &Path, db_id: &str, count: usize) -> Vec<PathBuf> {
    assert_eq!(db_id, "drivers", "only the drivers suite is modeled");
    let suite_dir = dir.join("suite").join(db_id);
    let mut files = Vec::with_capacity(count);
    for instance in 0..count {
        let path = suite_dir.join(format!("{db_id}_{instance}.sqlite"));
        if !path.exists() {
            // Instance 0 keeps every code below 100; later instances move
            // one driver above it.
            let third_code = if instance == 0 { 57 } else { 100 + instance };
            let setup = format!(
                "CREATE TABLE drivers (code INTEGER PRIMARY KEY, nationality TEXT);
                 INSERT INTO drivers VALUES (1, 'American'), (2, 'American'), ({third_code}, 'American');"
            );
            create_db(&path, &setup);
        }
        files.push(path);
    }
    files
}

pub fn item(id: &str, db_id: &str, gold_sql: &str) -> DatasetItem {
    DatasetItem {
        item_id: id.to_string(),
        question: format!("fixture question {id}"),
        evidence: String::new(),
        db_id: db_id.to_string(),
        gold_sql: gold_sql.to_string(),
    }
}

/// (gold item, predicted SQL) pairs spanning the fixture databases: ordered
/// and unordered golds, NULL and duplicate handling, real-valued results,
/// engine errors, and one runaway query that must time out.
pub fn ex_fixture_pairs() -> Vec<(DatasetItem, String)> {
    let mut pairs: Vec<(DatasetItem, String)> = Vec::new();
    let mut push = |id: &str, db: &str, gold: &str, pred: &str| {
        pairs.push((item(id, db, gold), pred.to_string()));
    };

    // drivers
    let gold_codes = "SELECT code FROM drivers WHERE Nationality = 'American'";
    push("d01", "drivers", gold_codes, gold_codes);
    push("d02", "drivers", gold_codes, "SELECT code FROM drivers WHERE nationality = 'America'");
    push("d03", "drivers", gold_codes, "SELECT made_up FROM drivers");
    push(
        "d04",
        "drivers",
        "SELECT code, nationality FROM drivers",
        "SELECT nationality, code FROM drivers",
    );
    push(
        "d05",
        "drivers",
        "SELECT code FROM drivers ORDER BY code DESC",
        "SELECT code FROM drivers ORDER BY code ASC",
    );
    push(
        "d06",
        "drivers",
        "SELECT code FROM drivers ORDER BY code DESC",
        "SELECT code FROM drivers ORDER BY code DESC",
    );
    push("d07", "drivers", gold_codes, "SELECT code FROM drivers ORDER BY code DESC");
    push("d08", "drivers", "SELECT 1, 2", "VALUES (1, 2)");
    push(
        "d09",
        "drivers",
        "SELECT code FROM drivers ORDER BY code LIMIT 2",
        "SELECT code FROM drivers ORDER BY code LIMIT 2 OFFSET 1",
    );
    push("d10", "drivers", "SELECT 'Apple'", "SELECT lower('Apple')");

    // molecules
    let count_bonds = "SELECT count(*) FROM bond WHERE bond_type = '#'";
    push("m01", "molecules", count_bonds, count_bonds);
    push("m02", "molecules", count_bonds, "SELECT count(bond_id) FROM bond WHERE bond_type = '#'");
    push(
        "m03",
        "molecules",
        count_bonds,
        "SELECT count(DISTINCT molecule_id) FROM bond WHERE bond_type = '#'",
    );
    push(
        "m04",
        "molecules",
        "SELECT label FROM molecule",
        "SELECT label FROM molecule WHERE label IS NOT NULL",
    );
    push(
        "m05",
        "molecules",
        "SELECT label FROM molecule",
        "SELECT label FROM molecule WHERE molecule_id <> 'zzz'",
    );
    push("m06", "molecules", count_bonds, "SELEC count(*) FROM bond");
    push("m07", "molecules", count_bonds, RUNAWAY_QUERY);
    push("m08", "molecules", count_bonds, "SELECT 3; SELECT 3");
    push("m09", "molecules", count_bonds, "DELETE FROM bond");
    push(
        "m10",
        "molecules",
        "SELECT DISTINCT element FROM atom",
        "SELECT element FROM atom GROUP BY element",
    );
    push(
        "m11",
        "molecules",
        "SELECT element, label FROM atom JOIN molecule ON atom.molecule_id = molecule.molecule_id",
        "SELECT label, element FROM atom JOIN molecule ON atom.molecule_id = molecule.molecule_id",
    );
    push(
        "m12",
        "molecules",
        "SELECT molecule_id, label FROM molecule WHERE molecule_id IN ('TR000','TR001')",
        "SELECT label FROM molecule WHERE molecule_id IN ('TR000','TR001')",
    );

    // schools
    let gold_math = "SELECT avgscrmath FROM satscores ORDER BY cds";
    push("s01", "schools", gold_math, gold_math);
    push("s02", "schools", gold_math, "SELECT avgscrmath + 0.0000001 FROM satscores ORDER BY cds");
    push("s03", "schools", gold_math, "SELECT avgscrmath + 0.001 FROM satscores ORDER BY cds");
    push("s04", "schools", "SELECT cname FROM satscores", "SELECT DISTINCT cname FROM satscores");
    push(
        "s05",
        "schools",
        "SELECT sname FROM satscores",
        "SELECT sname FROM satscores WHERE sname IS NOT NULL",
    );
    push(
        "s06",
        "schools",
        "SELECT sname FROM satscores WHERE cname = 'ZZZ'",
        "SELECT school FROM schools WHERE county = 'YYY'",
    );
    push(
        "s07",
        "schools",
        "SELECT T2.zip FROM frpm AS T1 INNER JOIN schools AS T2 ON T1.cdscode = T2.cdscode \
         WHERE T1.district_name = 'Fresno County Office of Education' AND T1.charter = 1",
        "SELECT DISTINCT schools.zip FROM schools INNER JOIN frpm ON schools.cdscode = frpm.cdscode \
         WHERE schools.county = 'Fresno' AND frpm.charter = 1",
    );
    push(
        "s08",
        "schools",
        "SELECT T1.avgscrmath, T2.county FROM satscores AS T1 INNER JOIN schools AS T2 \
         ON T1.cds = T2.cdscode ORDER BY T1.avgscrmath ASC LIMIT 1",
        "SELECT avgscrmath, county FROM satscores ORDER BY avgscrmath ASC LIMIT 1",
    );
    push(
        "s09",
        "schools",
        "SELECT CAST(SUM(numtsttakr) AS REAL) / COUNT(*) FROM satscores",
        "SELECT AVG(numtsttakr) FROM satscores",
    );
    push(
        "s10",
        "schools",
        "SELECT sname FROM satscores WHERE numtsttakr > 50 ORDER BY numtsttakr DESC",
        "SELECT sname FROM satscores WHERE numtsttakr > 50 ORDER BY numtsttakr",
    );

    // shop
    push("p01", "shop", "SELECT item FROM sales", "SELECT item FROM sales");
    push("p02", "shop", "SELECT item FROM sales", "SELECT item FROM sales GROUP BY item");
    push("p03", "shop", "SELECT SUM(price) FROM sales", "SELECT ROUND(SUM(price), 6) FROM sales");
    push(
        "p04",
        "shop",
        "SELECT item, qty FROM sales ORDER BY sale_id",
        "SELECT item, qty FROM sales ORDER BY sale_id ASC",
    );
    push("p05", "shop", "SELECT qty FROM sales", "SELECT qty FROM sales WHERE qty IS NOT NULL");

    pairs
}

/// A small mixed batch for pool tests: correct, incorrect, non-executable.
pub fn fixture_judge_jobs() -> Vec<JudgeJob> {
    ex_fixture_pairs()
        .into_iter()
        .filter(|(item, _)| item.item_id != "m07")
        .map(|(item, pred_sql)| JudgeJob { item, pred_sql })
        .collect()
}

/// Synthetic judged rollouts: `items` items x `samples` samples with a
/// planted verdict pattern. Items where `item_index % 3 == 0` are
/// all-correct, `% 3 == 1` all-incorrect, `% 3 == 2` mixed.
pub fn synthetic_judged_rollouts(items: usize, samples: usize) -> Vec<crate::rollouts::Rollout> {
    use crate::executor::Verdict;
    let mut rollouts = Vec::with_capacity(items * samples);
    for item in 0..items {
        for sample in 0..samples {
            let verdict = match item % 3 {
                0 => Verdict::Correct,
                1 => {
                    if sample % 4 == 3 {
                        Verdict::Nonexecutable
                    } else {
                        Verdict::Incorrect
                    }
                }
                _ => {
                    if sample % 2 == 0 {
                        Verdict::Correct
                    } else {
                        Verdict::Incorrect
                    }
                }
            };
            let sql = format!("SELECT {sample} FROM t{item}");
            rollouts.push(crate::rollouts::Rollout {
                item_id: format!("item-{item:04}"),
                checkpoint_tag: "sft".to_string(),
                sample_index: sample as u32,
                text: format!("step one, step two.\n```sql\n{sql}\n```"),
                extracted_sql: Some(sql),
                verdict: Some(verdict),
            });
        }
    }
    rollouts
}

//! Template generator for a small labeled corpus of Java-like snippets.
//!
//! Each label has its own structural signature:
//! - ExtractMethod: one oversized method whose body repeats statement blocks;
//! - MoveClass: a class wired to a foreign package cluster through imports
//!   and fully qualified references;
//! - PullUpMethod: two sibling classes carrying an identical method.
//!
//! Identifiers come from seeded pools and every snippet gets a few shared
//! accessor members, so labels cannot be told apart by names alone.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, RefactoringLabel, Sample};

const NOUNS: &[&str] = &[
    "Order", "Invoice", "Customer", "Account", "Report", "Session", "Ticket", "Payment",
    "Shipment", "Ledger", "Profile", "Catalog", "Inventory", "Message", "Schedule", "Policy",
    "Claim", "Route", "Budget", "Contract",
];
const VERBS: &[&str] = &[
    "process", "update", "handle", "compute", "validate", "render", "load", "store", "apply",
    "merge", "publish", "resolve", "prepare", "sync",
];
const TYPES: &[&str] = &["String", "int", "long", "List<String>", "Map<String, Integer>", "double", "boolean"];
const PACKAGES: &[&str] = &[
    "billing", "shipping", "auth", "reporting", "storage", "messaging", "pricing", "audit",
    "search", "identity",
];
const OPS: &[&str] = &["add", "remove", "put", "append", "record", "notify", "track", "check"];
const PARENTS: &[&str] = &["BaseHandler", "AbstractService", "Component", "Processor", "Entity", "Worker"];
const ROLES: &[&str] = &["Manager", "Service", "Helper", "Controller", "Repository", "Adapter"];

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).expect("non-empty pool")
}

fn lower_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().chain(c).collect(),
        None => String::new(),
    }
}

fn class_name(rng: &mut ChaCha8Rng) -> String {
    format!("{}{}", pick(rng, NOUNS), pick(rng, ROLES))
}

/// Getter/setter pairs shared by all templates.
fn accessors(rng: &mut ChaCha8Rng, out: &mut String) {
    for _ in 0..rng.gen_range(0..3) {
        let ty = pick(rng, TYPES);
        let noun = pick(rng, NOUNS);
        let field = lower_first(noun);
        writeln!(out, "    private {ty} {field};").unwrap();
        writeln!(out, "    public {ty} get{noun}() {{ return this.{field}; }}").unwrap();
        writeln!(out, "    public void set{noun}({ty} value) {{ this.{field} = value; }}").unwrap();
    }
}

fn extract_method(rng: &mut ChaCha8Rng) -> String {
    let cls = class_name(rng);
    let noun = pick(rng, NOUNS);
    let verb = pick(rng, VERBS);
    let arg = lower_first(pick(rng, NOUNS));
    let field = format!("{}s", lower_first(pick(rng, NOUNS)));
    let mut s = format!("public class {cls} {{\n");
    writeln!(s, "    private List<{noun}> {field} = new ArrayList<>();").unwrap();
    accessors(rng, &mut s);
    writeln!(s, "    public void {verb}{noun}({noun} {arg}) {{").unwrap();
    writeln!(s, "        int total = 0;").unwrap();
    for _ in 0..rng.gen_range(4..10) {
        let op = pick(rng, OPS);
        match rng.gen_range(0..3) {
            0 => {
                writeln!(s, "        if ({arg} != null && {arg}.isValid()) {{").unwrap();
                writeln!(s, "            {field}.{op}({arg});").unwrap();
                writeln!(s, "            total += {arg}.size();").unwrap();
                writeln!(s, "        }}").unwrap();
            }
            1 => {
                let n = rng.gen_range(2..50);
                writeln!(s, "        for (int i = 0; i < {n}; i++) {{").unwrap();
                writeln!(s, "            total += {field}.get(i).{op}(i);").unwrap();
                writeln!(s, "            log.debug(\"step \" + i + \" of {verb}\");").unwrap();
                writeln!(s, "        }}").unwrap();
            }
            _ => {
                writeln!(s, "        while (total < {}) {{", rng.gen_range(10..500)).unwrap();
                writeln!(s, "            total = total * 2 + {arg}.{op}(total);").unwrap();
                writeln!(s, "        }}").unwrap();
            }
        }
    }
    writeln!(s, "        this.{field}.clear();").unwrap();
    writeln!(s, "    }}\n}}").unwrap();
    s
}

fn move_class(rng: &mut ChaCha8Rng) -> String {
    let home = pick(rng, PACKAGES);
    let foreign: Vec<&str> = PACKAGES
        .choose_multiple(rng, 3)
        .copied()
        .filter(|p| *p != home)
        .collect();
    let cls = class_name(rng);
    let mut s = format!("package com.app.{home};\n\n");
    let mut deps = Vec::new();
    for pkg in &foreign {
        let dep = class_name(rng);
        writeln!(s, "import com.app.{pkg}.internal.{dep};").unwrap();
        deps.push((pkg.to_string(), dep));
    }
    writeln!(s, "\npublic class {cls} {{").unwrap();
    for (_, dep) in &deps {
        writeln!(s, "    private final {dep} {} = new {dep}();", lower_first(dep)).unwrap();
    }
    accessors(rng, &mut s);
    for (pkg, dep) in &deps {
        let verb = pick(rng, VERBS);
        let noun = pick(rng, NOUNS);
        writeln!(s, "    public {noun} {verb}{noun}() {{").unwrap();
        writeln!(
            s,
            "        return {}.{verb}(com.app.{pkg}.internal.{dep}.DEFAULT_{});",
            lower_first(dep),
            noun.to_uppercase()
        )
        .unwrap();
        writeln!(s, "    }}").unwrap();
    }
    s.push_str("}\n");
    s
}

fn pull_up_method(rng: &mut ChaCha8Rng) -> String {
    let parent = pick(rng, PARENTS);
    let ty = pick(rng, TYPES);
    let verb = pick(rng, VERBS);
    let noun = pick(rng, NOUNS);
    let arg = lower_first(pick(rng, NOUNS));
    let op = pick(rng, OPS);
    let body = format!(
        "    public {ty} {verb}{noun}({ty} {arg}) {{\n        \
         if ({arg} == null) {{ throw new IllegalArgumentException(\"{arg}\"); }}\n        \
         return this.{op}({arg});\n    }}\n"
    );
    let mut s = String::new();
    let mut used = Vec::new();
    for _ in 0..2 {
        let mut child = class_name(rng);
        while used.contains(&child) {
            child = class_name(rng);
        }
        writeln!(s, "class {child} extends {parent} {{").unwrap();
        accessors(rng, &mut s);
        s.push_str(&body);
        s.push_str("}\n\n");
        used.push(child);
    }
    s.truncate(s.trim_end().len());
    s.push('\n');
    s
}

/// Generates `per_class` samples of each label, interleaved by label.
pub fn generate(per_class: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(per_class * 3);
    for _ in 0..per_class {
        for label in RefactoringLabel::ALL {
            let code = match label {
                RefactoringLabel::ExtractMethod => extract_method(&mut rng),
                RefactoringLabel::MoveClass => move_class(&mut rng),
                RefactoringLabel::PullUpMethod => pull_up_method(&mut rng),
            };
            let mut sample = Sample::new(code, label);
            sample.project_id = Some(format!("project-{:02}", rng.gen_range(0..20)));
            samples.push(sample);
        }
    }
    Corpus::new(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_tsv, to_tsv};
    use crate::tokenizer::{build_vocab, encode};

    #[test]
    fn counts_and_determinism() {
        let c = generate(100, 7);
        assert_eq!(c.len(), 300);
        assert_eq!(c.counts(), [100, 100, 100]);
        assert_eq!(to_tsv(&c), to_tsv(&generate(100, 7)));
        assert_ne!(to_tsv(&c), to_tsv(&generate(100, 8)));
    }

    #[test]
    fn rows_pass_validation() {
        let c = generate(20, 1);
        assert_eq!(parse_tsv(&to_tsv(&c)).unwrap(), c);
    }

    #[test]
    fn some_snippets_need_several_windows() {
        let c = generate(50, 3);
        let vocab = build_vocab(&c, 8192).unwrap();
        let lens: Vec<usize> = c.samples().iter().map(|s| encode(&s.code, &vocab).len()).collect();
        assert!(lens.iter().any(|&l| l > 200), "max {}", lens.iter().max().unwrap());
        assert!(lens.iter().any(|&l| l < 200));
    }

    #[test]
    fn pull_up_siblings_share_the_method() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let code = pull_up_method(&mut rng);
        let methods: Vec<&str> = code.lines().filter(|l| l.contains("throw new")).collect();
        assert_eq!(methods.len(), 2);
        assert_eq!(methods[0], methods[1]);
    }
}

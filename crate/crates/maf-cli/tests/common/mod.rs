//! Scaffolding shared by the integration suites: the repository root and the
//! scripted replies that drive the toy math dataset end to end.

#![allow(dead_code)] // each test binary uses a different subset

use std::path::PathBuf;

use maf::ScriptRule;

/// Repository root, two levels above this crate's manifest.
pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .expect("workspace root exists")
}

/// A review that accepts all four lines of the toy programs.
pub const TOY_CLEAN_REVIEW: &str =
    "Step 1: looks good\nStep 2: looks good\nStep 3: looks good\nStep 4: looks good";

pub const TOY_MUFFIN_BUGGY: &str =
    "price_per_muffin = 5\nmuffins_sold = 7\nmoney_made = price_per_muffin + muffins_sold\nprint(money_made)";

pub const TOY_MUFFIN_FIXED: &str =
    "price_per_muffin = 5\nmuffins_sold = 7\nmoney_made = price_per_muffin * muffins_sold\nprint(money_made)";

/// Scripted replies for the toy math dataset. The crayon and page problems
/// come out right on the first try; the muffin program adds the price to the
/// count, the commonsense reviewer flags line 3, and the refiner swaps the
/// `+` for a `*`. Both refiner prompts are covered so the same script drives
/// the strategy-sweep ablation, where the flagging module may run eagerly.
pub fn toy_math_rules() -> Vec<ScriptRule> {
    vec![
        ScriptRule::all_of(
            ["Write a short Python program", "Maya has 3 boxes"],
            "boxes = 3\ncrayons_per_box = 4\ntotal_crayons = boxes * crayons_per_box\nprint(total_crayons)",
        ),
        ScriptRule::all_of(
            ["Write a short Python program", "sells muffins for 5 dollars"],
            TOY_MUFFIN_BUGGY,
        ),
        ScriptRule::all_of(
            ["Write a short Python program", "Liam read 24 pages"],
            "pages_monday = 24\npages_tuesday = 16\ntotal_pages = pages_monday + pages_tuesday\nprint(total_pages)",
        ),
        ScriptRule::all_of(
            [
                "situation the question describes",
                "price_per_muffin + muffins_sold",
            ],
            "Step 1: looks good\nStep 2: looks good\nStep 3: money made by selling is price times count, but this line adds the price to the count\nStep 4: looks good",
        ),
        ScriptRule::all_of(
            [
                "grouped under \"###\" headings",
                "price_per_muffin + muffins_sold",
            ],
            TOY_MUFFIN_FIXED,
        ),
        ScriptRule::all_of(
            [
                "A reviewer left feedback on the program",
                "price_per_muffin + muffins_sold",
            ],
            TOY_MUFFIN_FIXED,
        ),
        ScriptRule::substring("Check the variable names", TOY_CLEAN_REVIEW),
        ScriptRule::substring("situation the question describes", TOY_CLEAN_REVIEW),
        ScriptRule::substring("repeat work already done", TOY_CLEAN_REVIEW),
        ScriptRule::substring("no step of the calculation is missing", TOY_CLEAN_REVIEW),
    ]
}

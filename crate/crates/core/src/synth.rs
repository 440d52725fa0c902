//! Seeded synthetic tables in the raw UCI Adult and Credit column layouts.
//! Marginals and correlations are rough imitations of the public data; they
//! exist so the whole pipeline can run offline.

use std::io::Write;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

pub const ADULT_HEADER: [&str; 15] = [
    "age",
    "workclass",
    "fnlwgt",
    "education",
    "education-num",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "capital-gain",
    "capital-loss",
    "hours-per-week",
    "native-country",
    "income",
];

fn choose<'a, R: Rng>(rng: &mut R, items: &[(&'a str, f64)]) -> &'a str {
    let dist = WeightedIndex::new(items.iter().map(|(_, w)| *w)).expect("positive weights");
    items[dist.sample(rng)].0
}

fn normal_int<R: Rng>(rng: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> i64 {
    let v: f64 = Normal::new(mean, sd).expect("valid normal").sample(rng);
    v.round().clamp(lo, hi) as i64
}

fn education_num(edu: &str) -> u32 {
    match edu {
        "Preschool" => 1,
        "7th-8th" => 4,
        "10th" => 6,
        "11th" => 7,
        "HS-grad" => 9,
        "Some-college" => 10,
        "Assoc-voc" => 11,
        "Assoc-acdm" => 12,
        "Bachelors" => 13,
        "Masters" => 14,
        "Prof-school" => 15,
        _ => 16,
    }
}

/// Write `n` Adult-layout rows (with header) to `out`.
pub fn write_adult<W: Write>(out: W, n: usize, seed: u64) -> csv::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ADULT_HEADER)?;
    for _ in 0..n {
        let female = rng.gen_bool(0.33);
        let high = rng.gen_bool(if female { 0.11 } else { 0.31 });
        let married = rng.gen_bool(if high {
            0.85
        } else if female {
            0.15
        } else {
            0.45
        });

        let age = normal_int(&mut rng, if high { 44.0 } else { 36.0 }, 11.0, 17.0, 90.0);
        let workclass = if rng.gen_bool(0.05) {
            "?"
        } else {
            choose(
                &mut rng,
                &[
                    ("Private", 70.0),
                    ("Self-emp-not-inc", 8.0),
                    ("Self-emp-inc", if high { 7.0 } else { 2.0 }),
                    ("Local-gov", 6.0),
                    ("State-gov", 4.0),
                    ("Federal-gov", if high { 4.0 } else { 2.0 }),
                ],
            )
        };
        let education = choose(
            &mut rng,
            &if high {
                [
                    ("HS-grad", 20.0),
                    ("Some-college", 18.0),
                    ("Bachelors", 30.0),
                    ("Masters", 14.0),
                    ("Prof-school", 5.0),
                    ("Doctorate", 4.0),
                    ("Assoc-voc", 5.0),
                    ("11th", 2.0),
                    ("7th-8th", 1.0),
                    ("Assoc-acdm", 1.0),
                ]
            } else {
                [
                    ("HS-grad", 35.0),
                    ("Some-college", 24.0),
                    ("Bachelors", 13.0),
                    ("Masters", 3.0),
                    ("Prof-school", 0.5),
                    ("Doctorate", 0.5),
                    ("Assoc-voc", 4.0),
                    ("11th", 5.0),
                    ("7th-8th", 3.0),
                    ("10th", 4.0),
                ]
            },
        );
        let marital = if married {
            "Married-civ-spouse"
        } else {
            choose(
                &mut rng,
                &[
                    ("Never-married", 55.0),
                    ("Divorced", 28.0),
                    ("Separated", 6.0),
                    ("Widowed", 6.0),
                ],
            )
        };
        let occupation = if workclass == "?" {
            "?"
        } else if high {
            choose(
                &mut rng,
                &[
                    ("Exec-managerial", 25.0),
                    ("Prof-specialty", 24.0),
                    ("Sales", 12.0),
                    ("Craft-repair", 10.0),
                    ("Adm-clerical", 7.0),
                    ("Tech-support", 5.0),
                    ("Transport-moving", 4.0),
                    ("Protective-serv", 3.0),
                ],
            )
        } else {
            choose(
                &mut rng,
                &[
                    ("Exec-managerial", 8.0),
                    ("Prof-specialty", 9.0),
                    ("Sales", 11.0),
                    ("Craft-repair", 13.0),
                    ("Adm-clerical", 14.0),
                    ("Other-service", 14.0),
                    ("Machine-op-inspct", 7.0),
                    ("Handlers-cleaners", 5.0),
                    ("Transport-moving", 5.0),
                    ("Farming-fishing", 3.0),
                ],
            )
        };
        let relationship = if married {
            if female {
                "Wife"
            } else {
                "Husband"
            }
        } else if age < 25 {
            choose(
                &mut rng,
                &[("Own-child", 60.0), ("Not-in-family", 30.0), ("Unmarried", 10.0)],
            )
        } else {
            choose(
                &mut rng,
                &[("Not-in-family", 55.0), ("Unmarried", 35.0), ("Own-child", 10.0)],
            )
        };
        let capital_gain = if rng.gen_bool(if high { 0.2 } else { 0.04 }) {
            if high {
                rng.gen_range(5000..25000)
            } else {
                rng.gen_range(500..5000)
            }
        } else {
            0
        };
        let capital_loss = if capital_gain == 0 && rng.gen_bool(if high { 0.08 } else { 0.03 }) {
            rng.gen_range(1400..2600)
        } else {
            0
        };
        let hours = normal_int(&mut rng, if high { 45.0 } else { 38.0 }, 10.0, 1.0, 99.0);
        let race = choose(
            &mut rng,
            &[
                ("White", 85.0),
                ("Black", 10.0),
                ("Asian-Pac-Islander", 3.0),
                ("Other", 2.0),
            ],
        );
        let country = choose(
            &mut rng,
            &[
                ("United-States", 90.0),
                ("Mexico", 3.0),
                ("?", 2.0),
                ("Philippines", 1.0),
                ("Germany", 1.0),
                ("Canada", 1.0),
                ("India", 2.0),
            ],
        );

        w.write_record([
            age.to_string(),
            workclass.to_string(),
            rng.gen_range(20_000..800_000).to_string(),
            education.to_string(),
            education_num(education).to_string(),
            marital.to_string(),
            occupation.to_string(),
            relationship.to_string(),
            race.to_string(),
            if female { "Female" } else { "Male" }.to_string(),
            capital_gain.to_string(),
            capital_loss.to_string(),
            hours.to_string(),
            country.to_string(),
            if high { ">50K" } else { "<=50K" }.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn credit_header() -> Vec<String> {
    let mut h: Vec<String> = ["ID", "LIMIT_BAL", "SEX", "EDUCATION", "MARRIAGE", "AGE", "PAY_0"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((2..=6).map(|i| format!("PAY_{i}")));
    h.extend((1..=6).map(|i| format!("BILL_AMT{i}")));
    h.extend((1..=6).map(|i| format!("PAY_AMT{i}")));
    h.push("default payment next month".into());
    h
}

/// Write `n` Credit-layout rows (with header) to `out`.
pub fn write_credit<W: Write>(out: W, n: usize, seed: u64) -> csv::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(credit_header())?;
    for id in 1..=n {
        let male = rng.gen_bool(0.4);
        let default = rng.gen_bool(if male { 0.24 } else { 0.21 });
        let limit = (normal_int(&mut rng, if default { 120.0 } else { 180.0 }, 110.0, 10.0, 1000.0)) * 1000;
        let education = choose(
            &mut rng,
            &[("1", 35.0), ("2", 47.0), ("3", 16.0), ("4", 1.0), ("5", 1.0)],
        );
        let marriage = choose(&mut rng, &[("1", 45.0), ("2", 53.0), ("3", 1.5), ("0", 0.5)]);
        let age = normal_int(&mut rng, 35.5, 9.0, 21.0, 79.0);
        let mut row = vec![
            id.to_string(),
            limit.to_string(),
            if male { "1" } else { "2" }.to_string(),
            education.to_string(),
            marriage.to_string(),
            age.to_string(),
        ];
        let delay_p = if default { 0.45 } else { 0.12 };
        for _ in 0..6 {
            let pay = if rng.gen_bool(delay_p) {
                rng.gen_range(1..=4)
            } else {
                choose(&mut rng, &[("-1", 1.0), ("0", 2.0), ("-2", 0.7)])
                    .parse()
                    .unwrap()
            };
            row.push(pay.to_string());
        }
        let bill_level = limit as f64 * rng.gen_range(0.05..0.9);
        for _ in 0..6 {
            let bill = (bill_level * rng.gen_range(0.8..1.2)).round() as i64;
            row.push(bill.to_string());
        }
        let pay_ratio = if default { 0.03 } else { 0.1 };
        for _ in 0..6 {
            let paid = (bill_level * pay_ratio * rng.gen_range(0.0..2.0)).round() as i64;
            row.push(paid.to_string());
        }
        row.push(if default { "1" } else { "0" }.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn adult_csv(n: usize, seed: u64) -> String {
    let mut buf = Vec::new();
    write_adult(&mut buf, n, seed).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

pub fn credit_csv(n: usize, seed: u64) -> String {
    let mut buf = Vec::new();
    write_credit(&mut buf, n, seed).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

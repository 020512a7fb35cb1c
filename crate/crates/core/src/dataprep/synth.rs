//! Templated oncology letters with invented people and places.
//!
//! Recommended-intent letters end with the patient asking for time to
//! decide; planned-intent letters list appointment dates after the
//! document date.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{render_letter, DateSpec, DatePoint, HistoryEntry, LetterRecord, Patient, TreatmentIntent};

/// Present in every recommended-intent body.
pub const CONSIDER_PHRASE: &str = "needs time to consider";
/// Introduces the appointment list of every planned-intent body.
pub const SCHEDULE_PHRASE: &str = "We have arranged the following dates:";

const FEMALE: [&str; 10] = [
    "Greta", "Lina", "Marlene", "Frieda", "Ilse", "Nora", "Edda", "Helga", "Irma", "Wanda",
];
const MALE: [&str; 10] = [
    "Bruno", "Kurt", "Anton", "Egon", "Hugo", "Alois", "Rudolf", "Veit", "Gustav", "Arno",
];
const SURNAMES: [&str; 16] = [
    "Pfeiffer", "Voss", "Hollander", "Reinhold", "Kessler", "Aurich", "Blum", "Dietl", "Engel",
    "Falkner", "Gruber", "Hainz", "Jost", "Kranz", "Lutz", "Moser",
];
/// Physicians: (name, title). Disjoint from the patient pools.
const AUTHORS: [(&str, &str); 5] = [
    ("Dr. Selma Ostrowski", "Senior Physician"),
    ("Dr. Henrik Thalberg", "Consultant"),
    ("Prof. Dr. Ulla Rensing", "Head of Department"),
    ("Dr. Jonas Wieland", "Resident Physician"),
    ("Dr. Petra Quandt", "Senior Physician"),
];
const PRACTITIONERS: [&str; 8] = [
    "Dr. Carla Zenker", "Dr. Malte Ortlieb", "Dr. Rita Seebach", "Dr. Ole Pahl",
    "Dr. Tilda Vogt", "Dr. Bernd Ulmer", "Dr. Sanne Kiefer", "Dr. Falk Hausmann",
];
const TOWNS: [&str; 6] = ["Altdorf", "Neustadt", "Lindenberg", "Hofheim", "Seeburg", "Waldkirch"];
const COMORBIDITIES: [&str; 8] = [
    "Arterial hypertension",
    "Type 2 diabetes",
    "Atrial fibrillation",
    "Chronic kidney disease stage 2",
    "Hypothyroidism",
    "Coronary heart disease",
    "Osteoporosis",
    "Asthma",
];

struct Tumor {
    diagnosis: &'static str,
    stages: [&'static str; 3],
    workup: [&'static str; 3],
    treatments: [&'static str; 2],
    female_only: bool,
    male_only: bool,
}

const TUMORS: [Tumor; 6] = [
    Tumor {
        diagnosis: "Rectal carcinoma",
        stages: ["cT2 cN0 cM0", "cT3 cN1 cM0", "cT3 cN2 cM0"],
        workup: ["Blood in the stool.", "Colonoscopy with biopsy: adenocarcinoma.", "Staging CT without distant metastases."],
        treatments: ["Neoadjuvant radiochemotherapy with capecitabine.", "Short course radiotherapy with 5 x 5 Gy."],
        female_only: false,
        male_only: false,
    },
    Tumor {
        diagnosis: "Prostate carcinoma",
        stages: ["cT1c cN0 cM0", "cT2b cN0 cM0", "cT3a cN0 cM0"],
        workup: ["Rising PSA value.", "Biopsy: Gleason score 7.", "MRI of the pelvis without lymph node metastases."],
        treatments: ["Percutaneous radiotherapy of the prostate.", "Permanent seed brachytherapy."],
        female_only: false,
        male_only: true,
    },
    Tumor {
        diagnosis: "Breast carcinoma",
        stages: ["pT1 pN0 M0", "pT2 pN0 M0", "pT2 pN1 M0"],
        workup: ["Palpable lump in the breast.", "Core biopsy: invasive carcinoma.", "Breast conserving surgery."],
        treatments: ["Adjuvant radiotherapy of the breast.", "Adjuvant radiotherapy of the breast with boost."],
        female_only: true,
        male_only: false,
    },
    Tumor {
        diagnosis: "Lung carcinoma",
        stages: ["cT2 cN0 cM0", "cT1 cN0 cM0", "cT2 cN1 cM0"],
        workup: ["Persistent cough.", "CT of the chest with a pulmonary nodule.", "Bronchoscopy with biopsy: squamous cell carcinoma."],
        treatments: ["Stereotactic radiotherapy of the lung.", "Definitive radiochemotherapy with cisplatin."],
        female_only: false,
        male_only: false,
    },
    Tumor {
        diagnosis: "Head and neck carcinoma",
        stages: ["cT2 cN1 cM0", "cT3 cN0 cM0", "cT2 cN2 cM0"],
        workup: ["Hoarseness for several weeks.", "Panendoscopy with biopsy.", "CT of the neck with enlarged lymph nodes."],
        treatments: ["Definitive radiochemotherapy with cisplatin.", "Adjuvant radiotherapy of the neck."],
        female_only: false,
        male_only: false,
    },
    Tumor {
        diagnosis: "Bone metastases",
        stages: ["of the spine", "of the pelvis", "of the femur"],
        workup: ["Pain in the back.", "Bone scan with several lesions.", "MRI with a lesion at risk of fracture."],
        treatments: ["Palliative radiotherapy with 10 x 3 Gy.", "Palliative radiotherapy with 5 x 4 Gy."],
        female_only: false,
        male_only: false,
    },
];

const APPOINTMENTS: [&str; 3] = ["Planning CT.", "Start of radiotherapy.", "Follow-up visit."];

fn previous_workday(d: NaiveDate) -> NaiveDate {
    let mut p = d - Duration::days(1);
    while matches!(p.weekday(), Weekday::Sat | Weekday::Sun) {
        p -= Duration::days(1);
    }
    p
}

fn lower_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().chain(c).collect(),
        None => String::new(),
    }
}

fn fmt_day(d: NaiveDate) -> String {
    d.format("%d.%m.%Y").to_string()
}

fn record(rng: &mut ChaCha8Rng) -> LetterRecord {
    let tumor = TUMORS.choose(rng).expect("non-empty");
    let female = if tumor.female_only {
        true
    } else if tumor.male_only {
        false
    } else {
        rng.random_bool(0.5)
    };
    let first = if female { FEMALE.choose(rng) } else { MALE.choose(rng) }.expect("non-empty");
    let surname = *SURNAMES.choose(rng).expect("non-empty");
    let birth = NaiveDate::from_ymd_opt(rng.random_range(1935..1975), rng.random_range(1..=12), rng.random_range(1..=28))
        .expect("valid");
    let (author, title) = *AUTHORS.choose(rng).expect("non-empty");
    let gp = *PRACTITIONERS.choose(rng).expect("non-empty");
    let town = *TOWNS.choose(rng).expect("non-empty");

    let mut doc = NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid") + Duration::days(rng.random_range(0..4 * 365));
    while matches!(doc.weekday(), Weekday::Sat | Weekday::Sun) {
        doc += Duration::days(1);
    }
    let consult = previous_workday(doc);

    // first symptom 3 to 5 months back at month precision, then two dated steps
    let onset = doc - Duration::days(rng.random_range(95..150));
    let first_step = onset + Duration::days(rng.random_range(35..45));
    let second_step = first_step + Duration::days(rng.random_range(14..40));
    let history = vec![
        HistoryEntry {
            date: DateSpec {
                start: DatePoint::Month {
                    anchor: onset.with_day(1).expect("valid"),
                },
                end: None,
            },
            text: tumor.workup[0].to_string(),
        },
        HistoryEntry {
            date: DateSpec {
                start: DatePoint::Day(first_step),
                end: None,
            },
            text: tumor.workup[1].to_string(),
        },
        HistoryEntry {
            date: DateSpec {
                start: DatePoint::Day(second_step),
                end: None,
            },
            text: tumor.workup[2].to_string(),
        },
    ];

    let stage = *tumor.stages.choose(rng).expect("non-empty");
    let treatment = *tumor.treatments.choose(rng).expect("non-empty");
    let n_secondary = rng.random_range(0..=2);
    let mut secondary: Vec<String> = COMORBIDITIES
        .choose_multiple(rng, n_secondary)
        .map(|s| s.to_string())
        .collect();
    secondary.sort();
    let intent = if rng.random_bool(0.5) {
        TreatmentIntent::Recommended
    } else {
        TreatmentIntent::Planned
    };

    let address = if female { "Ms." } else { "Mr." };
    let gp_surname = gp.rsplit(' ').next().expect("non-empty");
    let mut body = format!(
        "Dear Dr. {gp_surname},\nwe report on {address} {surname}, who presented in our consultation on {} for {} {stage}.\n\
         We discussed the findings and the treatment options in detail.",
        fmt_day(consult),
        lower_first(tumor.diagnosis),
    );
    match intent {
        TreatmentIntent::Recommended => body.push_str(&format!(
            " We recommend {} The patient {CONSIDER_PHRASE} the recommendation and will contact us.",
            lower_first(treatment)
        )),
        TreatmentIntent::Planned => {
            body.push_str(&format!(
                " The patient agreed to {} {SCHEDULE_PHRASE}",
                lower_first(treatment)
            ));
            let mut day = doc;
            let n = rng.random_range(2..=3);
            for what in &APPOINTMENTS[..n] {
                day += Duration::days(rng.random_range(3..10));
                body.push_str(&format!("\n{}: {what}", fmt_day(day)));
            }
        }
    }
    body.push_str(&format!("\nKind regards,\n{author}\n{title}"));

    LetterRecord {
        document_date: doc,
        author: format!("{author}, {title}"),
        recipients: vec![format!("{gp}, General Practice, {town}")],
        patient: Some(Patient {
            name: format!("{first} {surname}"),
            birth_date: Some(fmt_day(birth)),
            id: Some(rng.random_range(1_000_000..10_000_000u32).to_string()),
            notes: Vec::new(),
        }),
        head_notes: Vec::new(),
        diagnoses: vec![format!("{} {stage}", tumor.diagnosis)],
        secondary_diagnoses: secondary,
        anamnesis_preface: Vec::new(),
        history,
        intent,
        treatment: treatment.to_string(),
        body,
    }
}

/// Deterministic synthetic records for `seed`.
pub fn synthetic_records(seed: u64, n: usize) -> Vec<LetterRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| record(&mut rng)).collect()
}

/// [`synthetic_records`] rendered as raw letter text.
pub fn generate_synthetic_corpus(seed: u64, n: usize) -> Vec<String> {
    synthetic_records(seed, n).iter().map(render_letter).collect()
}

#[cfg(test)]
mod tests {
    use super::super::{days_in_text, parse_letter};
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(generate_synthetic_corpus(3, 100), generate_synthetic_corpus(3, 100));
        assert_ne!(generate_synthetic_corpus(3, 5), generate_synthetic_corpus(4, 5));
    }

    #[test]
    fn every_letter_parses_back_to_its_record() {
        for r in synthetic_records(11, 200) {
            assert_eq!(parse_letter(&render_letter(&r)).unwrap(), r);
        }
    }

    #[test]
    fn intent_switch_content() {
        let recs = synthetic_records(5, 400);
        let planned = recs.iter().filter(|r| r.intent == TreatmentIntent::Planned).count();
        assert!((160..=240).contains(&planned), "{planned}");
        for r in &recs {
            match r.intent {
                TreatmentIntent::Recommended => {
                    assert!(r.body.contains(CONSIDER_PHRASE));
                    assert!(!r.body.contains(SCHEDULE_PHRASE));
                }
                TreatmentIntent::Planned => {
                    assert!(!r.body.contains(CONSIDER_PHRASE));
                    let later = days_in_text(&r.body).into_iter().filter(|d| *d > r.document_date).count();
                    assert!(later >= 2);
                }
            }
        }
    }

    #[test]
    fn consult_is_previous_workday() {
        for r in synthetic_records(9, 50) {
            let consult = days_in_text(&r.body)[0];
            assert_eq!(consult, previous_workday(r.document_date));
            assert!(!matches!(consult.weekday(), Weekday::Sat | Weekday::Sun));
        }
    }

    #[test]
    fn patients_and_physicians_do_not_share_names() {
        let physicians: Vec<&str> = AUTHORS.iter().map(|a| a.0).chain(PRACTITIONERS).collect();
        for name in FEMALE.iter().chain(&MALE).chain(&SURNAMES) {
            assert!(physicians.iter().all(|p| !p.contains(name)), "{name}");
        }
    }
}

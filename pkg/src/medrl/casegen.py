"""Synthetic consultation case generator.

Produces desk-scale case files whose composition mirrors a realistic
clinical mix: department proportions, checklist sizes of 20 to 35 items,
roughly half of items marked critical, and category frequencies dominated
by history of present illness. Every record is a pure function of the seed,
so regenerating with the same arguments yields byte-identical files.
"""
from __future__ import annotations

import random
from typing import Iterable

from .evalmetrics import ChecklistCategory, ChecklistItem, ChecklistLevel
from .records import SCHEMA_VERSION, write_jsonl

# department -> sampling weight (counts of a representative 303-case mix)
DEPARTMENT_COUNTS: dict[str, int] = {
    "general_practice": 111,
    "surgery": 50,
    "gynecology": 26,
    "neurology": 25,
    "gastroenterology": 18,
    "hematology": 15,
    "nephrology": 15,
    "cardiology": 14,
    "respiratory_medicine": 14,
    "endocrinology": 7,
    "rheumatology": 6,
    "geriatrics": 2,
}

CATEGORY_WEIGHTS: dict[ChecklistCategory, float] = {
    ChecklistCategory.PRESENT_ILLNESS: 0.558,
    ChecklistCategory.PAST_HISTORY: 0.196,
    ChecklistCategory.PERSONAL_SOCIAL: 0.146,
    ChecklistCategory.OBGYN: 0.054,
    ChecklistCategory.FAMILY: 0.047,
}

LEVEL2_FRACTION = 0.513
CHECKLIST_MIN, CHECKLIST_MAX = 20, 35

# unified 38-category test action space
LAB_UNIVERSE: tuple[str, ...] = (
    "blood_routine", "urine_routine", "stool_routine", "liver_function",
    "kidney_function", "electrolytes", "crp", "esr", "glucose_metabolism",
    "lipid_panel", "coagulation_profile", "thyroid_function",
    "cardiac_enzymes", "bnp", "blood_gas_analysis", "blood_culture",
    "procalcitonin", "ferritin_iron_studies", "vitamin_panel", "ct_scan",
    "mri", "ultrasound", "xray", "ecg", "eeg", "echocardiography",
    "pulmonary_function_test", "holter_monitor", "endoscopy_upper",
    "colonoscopy", "tumor_markers", "viral_markers", "autoantibody_panel",
    "hormone_panel", "bone_marrow_biopsy", "tissue_biopsy",
    "urine_microalbumin", "allergy_panel",
)

DEPARTMENT_ICD: dict[str, list[str]] = {
    "general_practice": ["J06.9", "A09", "R51"],
    "surgery": ["K35.8", "K80.2", "S52.5"],
    "gynecology": ["N76.0", "O21.0", "N80.1"],
    "neurology": ["G43.9", "I63.9", "G40.9"],
    "gastroenterology": ["K29.7", "K21.0", "K52.9"],
    "hematology": ["D64.9", "D69.3", "C91.1"],
    "nephrology": ["N39.0", "N18.3", "N04.9"],
    "cardiology": ["I20.9", "I10", "I48.0"],
    "respiratory_medicine": ["J18.9", "J45.9", "J44.1"],
    "endocrinology": ["E11.9", "E05.0", "E03.9"],
    "rheumatology": ["M06.9", "M32.9", "M10.0"],
    "geriatrics": ["I67.9", "F03", "M81.0"],
}

DEPARTMENT_COMPLAINT: dict[str, str] = {
    "general_practice": "fever and general malaise",
    "surgery": "acute abdominal pain",
    "gynecology": "lower abdominal discomfort",
    "neurology": "recurring headaches",
    "gastroenterology": "upper abdominal pain after meals",
    "hematology": "persistent fatigue and easy bruising",
    "nephrology": "swelling of the legs",
    "cardiology": "chest tightness on exertion",
    "respiratory_medicine": "cough and shortness of breath",
    "endocrinology": "unexplained weight change",
    "rheumatology": "joint pain and morning stiffness",
    "geriatrics": "progressive weakness",
}

# topic banks: (keyword phrase, statement template with a concrete detail)
_TOPICS: dict[ChecklistCategory, list[tuple[str, str]]] = {
    ChecklistCategory.PRESENT_ILLNESS: [
        ("fever", "The fever started {n} days ago and comes in the evening."),
        ("duration", "The symptoms have lasted about {n} days."),
        ("cough", "The cough is dry and worse at night."),
        ("sputum", "There is a little white sputum in the morning."),
        ("chest pain", "The chest pain sits behind the breastbone."),
        ("pain severity", "The pain is about {n} out of ten."),
        ("radiation", "The pain sometimes moves to the left shoulder."),
        ("breath", "Climbing one flight of stairs leaves me short of breath."),
        ("headache", "The headache throbs on one side of the head."),
        ("nausea", "There is nausea in the morning before eating."),
        ("vomiting", "I vomited {n} times yesterday."),
        ("diarrhea", "The stools have been loose for {n} days."),
        ("stool", "The stool looks darker than usual."),
        ("urination", "I get up {n} times a night to urinate."),
        ("urine", "The urine has looked foamy this week."),
        ("appetite", "My appetite is about half of what it was."),
        ("weight", "I lost {n} kilograms over the last two months."),
        ("fatigue", "I feel drained by the middle of the day."),
        ("dizziness", "The dizziness comes when I stand up quickly."),
        ("rash", "A faint rash appeared on both forearms."),
        ("joint", "The finger joints feel stiff for an hour each morning."),
        ("night sweats", "I wake up sweating about twice a week."),
        ("chills", "Shaking chills came with the fever last night."),
        ("palpitations", "My heart races for a few minutes at a time."),
        ("swelling", "Both ankles are swollen by the evening."),
        ("vision", "Vision blurs briefly when the headache peaks."),
        ("throat", "The throat has been sore since the fever began."),
        ("congestion", "The nose has been blocked for days."),
        ("abdominal pain", "The abdominal pain sits low on the right side."),
        ("trigger", "Greasy meals reliably bring the pain on."),
    ],
    ChecklistCategory.PAST_HISTORY: [
        ("hypertension", "I was told my blood pressure runs high {n} years ago."),
        ("diabetes", "There is no history of diabetes."),
        ("surgery", "I had my appendix removed as a teenager."),
        ("allergy", "Penicillin gives me a rash."),
        ("medication", "I take one aspirin tablet every morning."),
        ("hospitalization", "I was hospitalized once for pneumonia."),
        ("asthma", "I used an inhaler for asthma as a child."),
        ("hepatitis", "I have never been told I had hepatitis."),
        ("transfusion", "I have never received a blood transfusion."),
        ("immunization", "My vaccinations are up to date."),
    ],
    ChecklistCategory.PERSONAL_SOCIAL: [
        ("smoking", "I smoke about {n} cigarettes a day."),
        ("alcohol", "I drink a glass of wine on weekends."),
        ("occupation", "I work long shifts at a warehouse."),
        ("exercise", "I walk for half an hour most days."),
        ("diet", "Meals are irregular because of work."),
        ("travel", "I returned from a trip abroad last month."),
        ("pets", "We keep a cat at home."),
        ("living", "I live with my spouse and two children."),
    ],
    ChecklistCategory.OBGYN: [
        ("menstrual", "Periods come every {n} days and are regular."),
        ("pregnancy", "I have had two pregnancies, both uncomplicated."),
        ("menopause", "Menopause started two years ago."),
        ("contraception", "I do not use hormonal contraception."),
    ],
    ChecklistCategory.FAMILY: [
        ("family heart", "My father had a heart attack in his sixties."),
        ("family cancer", "An aunt was treated for breast cancer."),
        ("family diabetes", "My mother has type 2 diabetes."),
        ("family hypertension", "High blood pressure runs in the family."),
    ],
}

DEFAULT_SNIPPET: list[dict] = [
    {"role": "patient", "text": "I have been feeling worse since yesterday."},
    {"role": "physician", "text": "Tell me more about when it started."},
    {"role": "patient", "text": "It began after dinner and kept me up all night."},
    {"role": "physician", "text": "Have you taken anything for it?"},
    {"role": "patient", "text": "Just rest. Could this be something serious?"},
]

BEHAVIOR_CONSTRAINTS: list[str] = [
    "Answer only what the physician asks.",
    "Do not volunteer checklist information unprompted.",
    "Never initiate questions outside a scripted snippet.",
]

# per-department essential test pools; the rest of the universe is optional/decoy
_ESSENTIAL_POOL: dict[str, list[str]] = {
    "general_practice": ["blood_routine", "crp", "urine_routine"],
    "surgery": ["blood_routine", "ultrasound", "ct_scan", "coagulation_profile"],
    "gynecology": ["ultrasound", "urine_routine", "hormone_panel"],
    "neurology": ["ct_scan", "mri", "eeg"],
    "gastroenterology": ["endoscopy_upper", "liver_function", "stool_routine"],
    "hematology": ["blood_routine", "bone_marrow_biopsy", "ferritin_iron_studies"],
    "nephrology": ["kidney_function", "urine_routine", "urine_microalbumin"],
    "cardiology": ["ecg", "cardiac_enzymes", "echocardiography"],
    "respiratory_medicine": ["xray", "blood_gas_analysis", "pulmonary_function_test"],
    "endocrinology": ["glucose_metabolism", "thyroid_function", "hormone_panel"],
    "rheumatology": ["autoantibody_panel", "esr", "crp"],
    "geriatrics": ["blood_routine", "electrolytes", "ct_scan"],
}


def _draw_department(rng: random.Random) -> str:
    names = list(DEPARTMENT_COUNTS)
    weights = [DEPARTMENT_COUNTS[n] for n in names]
    return rng.choices(names, weights=weights, k=1)[0]


def _draw_category(rng: random.Random) -> ChecklistCategory:
    cats = list(CATEGORY_WEIGHTS)
    weights = [CATEGORY_WEIGHTS[c] for c in cats]
    return rng.choices(cats, weights=weights, k=1)[0]


def generate_case(case_id: str, rng: random.Random) -> dict:
    department = _draw_department(rng)
    complaint = DEPARTMENT_COMPLAINT[department]
    age = rng.randint(18, 85)
    sex = rng.choice(["female", "male"])
    size = rng.randint(CHECKLIST_MIN, CHECKLIST_MAX)

    remaining = {cat: list(topics) for cat, topics in _TOPICS.items()}
    checklist = []
    profile = []
    for i in range(size):
        category = _draw_category(rng)
        if not remaining[category]:
            fallbacks = [c for c in remaining if remaining[c]]
            category = max(fallbacks, key=lambda c: len(remaining[c]))
        keyword, template = remaining[category].pop(
            rng.randrange(len(remaining[category]))
        )
        level = 2 if rng.random() < LEVEL2_FRACTION else 1
        item_id = f"{case_id}-i{i:02d}"
        checklist.append({"id": item_id, "category": category.value, "level": level})
        profile.append(
            {
                "checklist_id": item_id,
                "keywords": [keyword],
                "statement": template.format(n=rng.randint(2, 9)),
            }
        )

    truth = rng.choice(DEPARTMENT_ICD[department])
    other_codes = [
        c
        for dept, codes in sorted(DEPARTMENT_ICD.items())
        for c in codes
        if c != truth
    ]
    decoys = rng.sample(other_codes, 2)

    essential = list(_ESSENTIAL_POOL[department])
    rest = [t for t in LAB_UNIVERSE if t not in essential]
    optional = rng.sample(rest, rng.randint(2, 4))
    decoy_pool = [t for t in rest if t not in optional]
    decoy_tests = rng.sample(decoy_pool, 3)

    return {
        "schema_version": SCHEMA_VERSION,
        "case_id": case_id,
        "department": department,
        "intake": f"A {age}-year-old {sex} presents with {complaint}.",
        "checklist": checklist,
        "profile": profile,
        "behavior_constraints": list(BEHAVIOR_CONSTRAINTS),
        "snippet": [dict(t) for t in DEFAULT_SNIPPET],
        "snippet_injection": None,
        "truth_icd": truth,
        "ddx_decoys": decoys,
        "essential_tests": essential,
        "optional_tests": optional,
        "decoy_tests": decoy_tests,
    }


def generate_cases(n: int, seed: int) -> list[dict]:
    rng = random.Random(seed)
    return [generate_case(f"case-{i:04d}", rng) for i in range(n)]


def write_cases(path, cases: Iterable[dict]) -> int:
    return write_jsonl(path, cases)


def checklist_items(case: dict) -> list[ChecklistItem]:
    return [
        ChecklistItem(
            id=item["id"],
            category=ChecklistCategory(item["category"]),
            level=ChecklistLevel(item["level"]),
        )
        for item in case["checklist"]
    ]

"""Regenerate the bundled toy dataset under src/rxdistill/data/toy/.

The output is deterministic; rerunning overwrites the files with identical bytes.
"""

import argparse
import json
import random
from pathlib import Path
from xml.sax.saxutils import escape

KG = """\
# head\trelation\ttail
Compound::albuterol\ttreats\tDisease::asthma
Compound::montelukast\ttreats\tDisease::asthma
Compound::metformin\ttreats\tDisease::type_2_diabetes
Compound::insulin\ttreats\tDisease::type_2_diabetes
Compound::aspirin\ttreats\tDisease::migraine
Compound::ibuprofen\ttreats\tDisease::migraine
Compound::albuterol\tbinds\tGene::ADRB2
Compound::montelukast\tbinds\tGene::CYSLTR1
Compound::aspirin\tbinds\tGene::PTGS1
Compound::ibuprofen\tbinds\tGene::PTGS1
"""

FINDINGS = {
    "supports": [
        "{drug} improved symptom scores in patients with {disease} compared with placebo.",
        "Treatment with {drug} reduced the frequency of {disease} episodes over twelve weeks.",
        "{drug} is recommended as a first line therapy for {disease} in current guidelines.",
        "Patients with {disease} who received {drug} reported fewer exacerbations.",
    ],
    "neutral": [
        "{drug} showed no meaningful benefit for {disease} in a small pilot cohort.",
        "The effect of {drug} on {disease} outcomes was not distinguishable from control.",
    ],
}
FILLER = [
    "Baseline characteristics were balanced between the study arms.",
    "Adverse events were mild and resolved without intervention.",
    "Adherence was monitored with pill counts at every visit.",
    "Secondary outcomes included quality of life and hospital admissions.",
    "The analysis followed the intention to treat principle.",
]

PAIRS = [  # (disease, drug, stance)
    ("asthma", "albuterol", "supports"), ("asthma", "montelukast", "supports"),
    ("asthma", "metformin", "neutral"), ("asthma", "aspirin", "neutral"),
    ("type 2 diabetes", "metformin", "supports"), ("type 2 diabetes", "insulin", "supports"),
    ("type 2 diabetes", "albuterol", "neutral"), ("type 2 diabetes", "ibuprofen", "neutral"),
    ("migraine", "aspirin", "supports"), ("migraine", "ibuprofen", "supports"),
    ("migraine", "montelukast", "neutral"), ("migraine", "insulin", "neutral"),
]

CONFIG = {
    "version": 1,
    "seed": 7,
    "paths": {"kg": "kg.tsv", "pmc": "pmc", "trials": "trials", "out_dir": "run"},
    "embed": {"dim": 32, "epochs": 150},
    "sample": {"pool_top_m": 4},
    "index": {"max_chunk_chars": 300},
    "retrieve": {"k": 20},
    "rerank": {"threshold": 0.2, "max_chunks": 3},
    "distill": {"epochs": 150},
}


def body_for(rng, disease, drug, stance):
    sents = [t.format(drug=drug, disease=disease) for t in rng.sample(FINDINGS[stance], 2)]
    sents += rng.sample(FILLER, 2)
    rng.shuffle(sents)
    return sents


def pmc_xml(pmcid, title, abstract, body):
    paras = "".join(f"<p>{escape(p)}</p>" for p in body)
    return (f'<?xml version="1.0" encoding="utf-8"?>\n<article><front><article-meta>'
            f'<article-id pub-id-type="pmc">{pmcid}</article-id>'
            f"<title-group><article-title>{escape(title)}</article-title></title-group>"
            f"<abstract><p>{escape(abstract)}</p></abstract>"
            f"</article-meta></front><body>{paras}</body></article>\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=Path(__file__).resolve().parents[1] / "src/rxdistill/data/toy", type=Path)
    args = ap.parse_args()
    rng = random.Random(20240101)
    out = args.out
    (out / "pmc").mkdir(parents=True, exist_ok=True)
    (out / "trials").mkdir(parents=True, exist_ok=True)
    (out / "kg.tsv").write_text(KG)
    (out / "config.json").write_text(json.dumps(CONFIG, indent=2) + "\n")

    n = 0
    for disease, drug, stance in PAIRS:  # 12 articles + 12 trials with mentions
        n += 1
        sents = body_for(rng, disease, drug, stance)
        pmcid = f"PMC{1000 + n}"
        (out / "pmc" / f"{pmcid}.xml").write_text(
            pmc_xml(pmcid, f"{drug.capitalize()} in {disease}", sents[0], sents[1:]))
        sents = body_for(rng, disease, drug, stance)
        nct = f"NCT{90000 + n:08d}"
        (out / "trials" / f"{nct}.json").write_text(json.dumps({
            "nct_id": nct, "brief_title": f"A trial of {drug} for {disease}",
            "brief_summary": " ".join(sents[:2]), "detailed_description": " ".join(sents[2:]),
        }, indent=2) + "\n")
    # three documents that mention no sampled drug
    for i, topic in enumerate(["physiotherapy", "dietary fibre", "sleep hygiene"]):
        pmcid = f"PMC{2001 + i}"
        (out / "pmc" / f"{pmcid}.xml").write_text(pmc_xml(
            pmcid, f"{topic.capitalize()} in chronic disease", f"We reviewed {topic} interventions.",
            rng.sample(FILLER, 3)))
    # three empty documents: no abstract, no title, empty trial summary
    (out / "pmc" / "PMC3001.xml").write_text(pmc_xml("PMC3001", "Untitled note", "", ["aspirin"]))
    (out / "pmc" / "PMC3002.xml").write_text(pmc_xml("PMC3002", "", "Metformin abstract.", []))
    (out / "trials" / "NCT00093001.json").write_text(json.dumps(
        {"nct_id": "NCT00093001", "brief_title": "Insulin pump study", "brief_summary": ""}, indent=2) + "\n")
    print(f"wrote toy dataset to {out}")


if __name__ == "__main__":
    main()

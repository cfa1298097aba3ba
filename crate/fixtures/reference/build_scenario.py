"""Writes the scripted reference scenario: 12 cases, the fixture file, the
knowledge base and the exemplar corpus.

Every scripted reply is a `contains` rule keyed on text unique to one case
(a background phrase, a node id or an adapted instruction), so rule order
only matters within a case. Rerun after editing; the golden logs must then
be re-pinned with FEAT_UPDATE_GOLDEN=1.
"""

import json
from pathlib import Path

HERE = Path(__file__).parent

CASES = [
    dict(
        id="C01", category="Poisoning", demographics="male, 46",
        background="Found unresponsive on a sofa beside two empty vodka bottles.",
        clinical="No medical history on file.",
        autopsy="Pulmonary edema and congestion. Gastric contents smell of alcohol. No injuries.",
        tox="Femoral blood ethanol 0.41 g/dL. No other drugs detected.",
        ref_long="Femoral blood ethanol of 0.41 g/dL is in the lethal range and the autopsy excludes trauma and natural disease.",
        ref_short="Acute ethanol poisoning",
        tree=[(0, "c01-root", "Determine the cause of death"), (1, "c01-tox", "Assess the toxicology report"), (1, "c01-path", "Evaluate the internal examination")],
        select=["c01-tox", "c01-path"],
        steps={
            "c01-tox": dict(instr="Interpret a femoral ethanol of 0.41 g/dL", route="1 - consult toxicology references",
                            react=["THOUGHT: check lethal thresholds\nTOOL: kb_lookup\nARGS: {\"query\": \"lethal blood ethanol concentration\"}",
                                   "THOUGHT: thresholds found\nFINAL: 0.41 g/dL exceeds the usual lethal threshold of 0.35 g/dL"],
                            answer="A femoral ethanol of 0.41 g/dL exceeds the commonly cited lethal threshold. Ethanol alone can explain death here.",
                            tidy="Ethanol 0.41 g/dL is above the lethal threshold."),
            "c01-path": dict(instr="Relate the pulmonary edema to central depression", route="0",
                             answer="Pulmonary edema without injury fits central respiratory depression. No anatomical cause of death was found.",
                             tidy="Edema without injury suggests respiratory depression."),
        },
        summary="The decedent had a femoral ethanol of 0.41 g/dL with pulmonary edema and no injuries or disease. The level lies in the lethal range, so death is attributed to acute ethanol poisoning.",
        conclude="Acute ethanol poisoning",
    ),
    dict(
        id="C02", category="Drowning", demographics="female, 23",
        background="Recovered from a reservoir two days after she was reported missing.",
        clinical="",
        autopsy="Froth in the airways. Overinflated lungs with watery fluid in the sphenoid sinus.",
        tox="Negative.",
        ref_long="Airway froth, emphysema aquosum and sinus fluid support drowning.",
        ref_short="Drowning",
        tree=[(0, "c02-root", "Establish whether death was due to drowning"), (1, "c02-signs", "Review the vital drowning signs"), (1, "c02-diatom", "Consider diatom testing")],
        select=["c02-signs", "c02-diatom"],
        steps={
            "c02-signs": dict(instr="Weigh airway froth and sinus fluid as drowning signs", route="0",
                              answer="Airway froth with overinflated lungs and sinus fluid are classic vital signs of drowning. Their combination is unlikely after post-mortem immersion.",
                              tidy="Froth, overinflation and sinus fluid indicate drowning."),
            "c02-diatom": dict(instr="Judge the value of diatom analysis for reservoir deaths", route="1",
                               react=["THOUGHT: search the literature\nTOOL: pubmed_search\nARGS: {\"query\": \"diatom test drowning freshwater\"}",
                                      "THOUGHT: literature is clear\nFINAL: diatom testing supports but does not prove drowning"],
                               answer="Diatom testing can support drowning in freshwater cases but a negative result does not exclude it. The vital signs carry more weight here.",
                               tidy="Diatoms would only support the diagnosis."),
        },
        summary="The body was recovered from a reservoir with airway froth, overinflated lungs and sinus fluid. These vital signs indicate drowning, and diatom analysis would only corroborate it.",
        conclude="Drowning",
    ),
    dict(
        id="C03", category="Mechanical Asphyxia", demographics="male, 35",
        background="Found suspended by a nylon cord from a stair banister.",
        clinical="Treated for depression.",
        autopsy="Oblique furrow rising to the left ear. Petechiae of the conjunctivae. Intact hyoid.",
        tox="Sertraline within therapeutic range.",
        ref_long="An oblique ascending ligature furrow with petechiae is typical of hanging.",
        ref_short="Hanging",
        tree=[(0, "c03-root", "Determine the mechanism of death"), (1, "c03-mark", "Analyse the ligature mark")],
        select=["c03-mark"],
        steps={
            "c03-mark": dict(instr="Distinguish hanging from strangulation by the furrow course", route="1",
                             react=["THOUGHT: compare patterns\nTOOL: web_search\nARGS: {\"query\": \"hanging versus ligature strangulation furrow\"}",
                                    "THOUGHT: enough\nFINAL: an oblique rising furrow indicates hanging"],
                             answer="An oblique furrow rising toward the suspension point indicates hanging rather than ligature strangulation. The intact hyoid does not argue against it.",
                             tidy="Furrow course indicates hanging."),
        },
        summary="The decedent was found suspended with an oblique rising furrow and conjunctival petechiae. The mark pattern indicates hanging, and toxicology shows only therapeutic sertraline.",
        conclude="Mechanical asphyxia due to hanging",
    ),
    dict(
        id="C04", category="Poisoning", demographics="male, 71",
        background="Found in a closed garage with a car engine still warm.",
        clinical="Hypertension.",
        autopsy="Cherry-pink lividity. Bright red blood and muscle.",
        tox="Carboxyhemoglobin saturation 64 percent.",
        ref_long="A carboxyhemoglobin of 64 percent with cherry-pink lividity establishes carbon monoxide poisoning.",
        ref_short="Carbon monoxide poisoning",
        tree=[(0, "c04-root", "Identify the cause of death"), (1, "c04-cohb", "Interpret the carboxyhemoglobin")],
        select=["c04-cohb"],
        steps={
            "c04-cohb": dict(instr="Assess whether a carboxyhemoglobin of 64 percent is fatal", route="1",
                             react=["THOUGHT: ask for clinical context\nTOOL: medical_llm\nARGS: {\"question\": \"Is a carboxyhemoglobin saturation of 64 percent fatal?\"}",
                                    "THOUGHT: answered\nFINAL: saturations above 50 percent are usually fatal"],
                             answer="A carboxyhemoglobin of 64 percent is well above the usually fatal range of 50 percent. The cherry-pink lividity agrees.",
                             tidy="COHb 64 percent is fatal."),
        },
        summary="The decedent was found in a closed garage with a warm engine, cherry-pink lividity and a carboxyhemoglobin of 64 percent. These findings establish carbon monoxide poisoning.",
        conclude="Carbon monoxide poisoning",
    ),
    dict(
        id="C05", category="Traumatic Brain Injury", demographics="female, 82",
        background="Found at the foot of a steep cellar staircase.",
        clinical="Anticoagulated for atrial fibrillation.",
        autopsy="Occipital scalp laceration. Acute subdural hematoma of 120 mL. Contrecoup frontal contusions.",
        tox="Negative.",
        ref_long="A fall with occipital impact caused a subdural hematoma with contrecoup contusions.",
        ref_short="Traumatic brain injury from a fall",
        tree=[(0, "c05-root", "Determine the cause of death"), (1, "c05-head", "Evaluate the intracranial findings")],
        select=["c05-head"],
        steps={
            "c05-head": dict(instr="Explain a subdural hematoma of 120 mL with contrecoup contusions", route="0",
                             answer="A subdural hematoma of 120 mL with frontal contrecoup contusions follows an occipital impact in a fall. Anticoagulation enlarged the bleed.",
                             tidy="Fall impact caused a large subdural hematoma."),
            "c05-scalp": dict(instr="Match the occipital laceration to a stair edge", route="0",
                              answer="The occipital laceration matches impact against a stair edge. It marks the primary impact site.",
                              tidy="Laceration marks the occipital impact."),
        },
        audit_gap="The occipital scalp laceration is not explained",
        replan_tree=[(0, "c05-root", "Determine the cause of death"), (1, "c05-head", "Evaluate the intracranial findings"), (1, "c05-scalp", "Examine the scalp laceration")],
        replan_select=["c05-scalp"],
        summary="An anticoagulated woman fell down a staircase and struck the back of her head. The occipital laceration marks the impact, and the resulting subdural hematoma with contrecoup contusions caused death.",
        conclude="Traumatic brain injury from a fall down stairs",
    ),
    dict(
        id="C06", category="Coronary Artery Atherosclerosis", demographics="male, 58",
        background="Collapsed while shovelling snow in front of his house.",
        clinical="Smoker with untreated hypercholesterolemia.",
        autopsy="Heart weight 520 g. Ninety percent stenosis of the left anterior descending artery. Old posterior scar.",
        tox="Negative.",
        ref_long="Severe coronary atherosclerosis with cardiomegaly and exertion explains sudden cardiac death.",
        ref_short="Sudden cardiac death due to coronary atherosclerosis",
        tree=[(0, "c06-root", "Determine the cause of death"), (1, "c06-heart", "Evaluate the cardiac findings")],
        select=["c06-heart"],
        steps={
            "c06-heart": dict(instr="Relate a ninety percent LAD stenosis to sudden death", route="0",
                              answer="A ninety percent stenosis of the left anterior descending artery with an enlarged heart is a substrate for fatal arrhythmia. An old scar shows earlier ischemia.",
                              tidy="Severe LAD stenosis explains sudden death."),
        },
        gap=[dict(q="Did the exertion of snow shovelling trigger the arrhythmia?", route="0",
                  answer="Heavy exertion in cold weather raises myocardial oxygen demand. It is a recognised trigger of arrhythmia in coronary disease.",
                  tidy="Exertion in cold triggered the arrhythmia.")],
        summary="A smoker with a ninety percent coronary stenosis and an enlarged heart collapsed while shovelling snow. Exertion in the cold triggered a fatal arrhythmia on this ischemic substrate.",
        conclude="Sudden cardiac death due to coronary atherosclerosis",
    ),
    dict(
        id="C07", category="Poisoning", demographics="male, 29",
        background="Found in a public restroom with a syringe in the sink.",
        clinical="Known intravenous drug use.",
        autopsy="Fresh puncture mark in the left antecubital fossa. Heavy edematous lungs.",
        tox="Fentanyl 18 ng/mL in femoral blood.",
        ref_long="Fentanyl of 18 ng/mL with a fresh puncture and pulmonary edema indicates opioid intoxication.",
        ref_short="Fentanyl intoxication",
        tree=[(0, "c07-root", "Determine the cause of death"), (1, "c07-opioid", "Evaluate the opioid finding")],
        select=["c07-opioid"],
        steps={
            "c07-opioid": dict(instr="Assess whether fentanyl at 18 ng/mL is lethal", route="1",
                               react=["THOUGHT: try a drug database\nTOOL: drug_db\nARGS: {\"drug\": \"fentanyl\"}",
                                      "THOUGHT: use the knowledge base instead\nTOOL: kb_lookup\nARGS: {\"query\": \"fentanyl fatal concentration\"}",
                                      "THOUGHT: enough\nFINAL: 18 ng/mL is within reported fatal concentrations"],
                               answer="Fentanyl at 18 ng/mL is within reported fatal concentrations for non-tolerant users. The puncture mark and edema agree with intravenous use.",
                               tidy="Fentanyl 18 ng/mL is in the fatal range."),
        },
        summary="A known drug user was found with a syringe, a fresh puncture and edematous lungs. Femoral fentanyl of 18 ng/mL is in the fatal range, so death is due to fentanyl intoxication.",
        conclude="Fentanyl intoxication",
    ),
    dict(
        id="C08", category="Other", demographics="female, 77",
        background="Found lightly dressed in her unheated flat in January.",
        clinical="Dementia.",
        autopsy="Wischnewski spots on the gastric mucosa. Pink discoloration over the knees.",
        tox="Negative.",
        ref_long="Wischnewski spots and pink knees in a cold flat indicate hypothermia.",
        ref_short="Hypothermia",
        tree=[(0, "c08-root", "Determine the cause of death"), (1, "c08-cold", "Evaluate the signs of cold exposure")],
        select=["c08-cold"],
        steps={
            "c08-cold": dict(instr="Judge Wischnewski spots as a sign of hypothermia", route="1",
                             react=["THOUGHT: search the literature\nTOOL: pubmed_search\nARGS: {\"query\": \"Wischnewski spots hypothermia\"}",
                                    "THOUGHT: retry the search\nTOOL: pubmed_search\nARGS: {\"query\": \"Wischnewski spots hypothermia\"}"],
                             answer="Wischnewski spots with pink knee discoloration are characteristic of fatal hypothermia. The cold flat and dementia fit the scenario.",
                             tidy="Wischnewski spots point to hypothermia."),
        },
        summary="A woman with dementia was found lightly dressed in an unheated flat. Wischnewski spots and pink knees indicate death from hypothermia.",
        conclude="Hypothermia",
    ),
    dict(
        id="C09", category="Traumatic Abdominal Injury", demographics="male, 41",
        background="Stabbed once during a fight outside a bar.",
        clinical="Arrived at hospital without vital signs.",
        autopsy="Single stab wound to the left upper abdomen. Laceration of the spleen. Hemoperitoneum of 2.5 L.",
        tox="Blood ethanol 0.08 g/dL.",
        ref_long="A stab wound lacerating the spleen caused a 2.5 L hemoperitoneum.",
        ref_short="Hemorrhage from a splenic stab wound",
        tree=[(0, "c09-root", "Determine the cause of death"), (1, "c09-wound", "Evaluate the stab wound")],
        select=["c09-wound"],
        steps={
            "c09-wound": dict(instr="Link the splenic laceration to the 2.5 L hemoperitoneum", route="0",
                              answer="The stab wound lacerated the spleen and produced a hemoperitoneum of 2.5 L. Blood loss of this size is fatal. The wound was inflicted post mortem.",
                              filter="1: KEEP\n2: KEEP\n3: INCONSISTENT",
                              tidy="Splenic laceration bled 2.5 L."),
        },
        summary="A single stab wound lacerated the spleen and caused a hemoperitoneum of 2.5 L. Death resulted from hemorrhage.",
        conclude="Hemorrhage from a stab wound of the spleen",
    ),
    dict(
        id="C10", category="Other", demographics="female, 34",
        background="Collapsed minutes after a wasp sting at a garden party.",
        clinical="Known allergy to insect venom.",
        autopsy="Laryngeal edema. Sting mark on the right forearm.",
        tox="Serum tryptase 110 ug/L.",
        ref_long="Laryngeal edema with elevated tryptase after a sting establishes anaphylaxis.",
        ref_short="Anaphylaxis",
        malformed_tree="Plan: look at the sting, then the larynx.",
        tree=[(0, "c10-root", "Determine the cause of death"), (1, "c10-allergy", "Evaluate the allergic reaction")],
        select=["c10-allergy"],
        steps={
            "c10-allergy": dict(instr="Interpret a tryptase of 110 ug/L with laryngeal edema", route="0",
                                answer="A tryptase of 110 ug/L with laryngeal edema confirms a severe anaphylactic reaction. The sting is the trigger.",
                                tidy="Tryptase and edema confirm anaphylaxis."),
        },
        summary="A woman allergic to insect venom collapsed after a wasp sting. Laryngeal edema and a tryptase of 110 ug/L confirm fatal anaphylaxis.",
        conclude="Anaphylaxis after a wasp sting",
    ),
    dict(
        id="C11", category="Electrical Injury", demographics="male, 52",
        background="Found beside an opened junction box holding a screwdriver.",
        clinical="",
        autopsy="Crater-like electrical mark on the right palm. Metallization of the skin.",
        tox="Negative.",
        ref_long="An electrical mark with metallization on the hand holding the tool indicates electrocution.",
        ref_short="Electrocution",
        tree=[(0, "c11-root", "Determine the cause of death"), (1, "c11-skin", "Evaluate the skin lesions"), (2, "c11-mark", "Describe the palm lesion"),
              (3, "c11-metal", "Check for metallization"), (4, "c11-micro", "Request histology"), (5, "c11-nuclei", "Look for elongated nuclei")],
        select=["c11-mark", "c11-nuclei"],
        steps={
            "c11-mark": dict(instr="Classify the crater-like palm lesion with metallization", route="0",
                             answer="A crater-like lesion with metallization on the palm is an electrical entry mark. It fits contact with a live conductor.",
                             tidy="Palm lesion is an electrical entry mark."),
        },
        summary="A man working on a junction box had an electrical entry mark with metallization on the palm holding a screwdriver. Death was due to electrocution.",
        conclude="Electrocution",
    ),
    dict(
        id="C12", category="Other", demographics="male, 19",
        background="Found dead in his dormitory after a week of vomiting.",
        clinical="Type 1 diabetes, missed insulin prescriptions.",
        autopsy="Dehydration. Armanni-Ebstein lesions in the kidneys.",
        tox="Vitreous glucose 31 mmol/L. Blood beta-hydroxybutyrate 9 mmol/L.",
        ref_long="Vitreous glucose and ketones with Armanni-Ebstein lesions establish diabetic ketoacidosis.",
        ref_short="Diabetic ketoacidosis",
        tree=[(0, "c12-root", "Determine the cause of death"), (1, "c12-metabolic", "Evaluate the metabolic findings")],
        select=["c12-metabolic"],
        steps={
            "c12-metabolic": dict(instr="Interpret vitreous glucose 31 mmol/L with beta-hydroxybutyrate 9 mmol/L", route="0",
                                  answer="Vitreous glucose of 31 mmol/L with beta-hydroxybutyrate of 9 mmol/L indicates diabetic ketoacidosis. Armanni-Ebstein lesions agree.",
                                  tidy="Glucose and ketones indicate ketoacidosis."),
        },
        audit_always="CONTRADICTION: The week of vomiting could also suggest an intoxication",
        summary="A young man with type 1 diabetes and missed insulin had vitreous glucose of 31 mmol/L and marked ketosis. Death was due to diabetic ketoacidosis.",
        conclude="Diabetic ketoacidosis",
    ),
]

CORPUS = [
    ("X01", "High blood ethanol with pulmonary edema and no injuries supports acute alcohol intoxication as the cause of death."),
    ("X02", "Airway froth and overinflated lungs in a body recovered from water are vital signs that support drowning."),
    ("X03", "An oblique ligature furrow rising to the suspension point with petechiae is typical of hanging."),
    ("X04", "Cherry-pink lividity and a high carboxyhemoglobin saturation establish carbon monoxide poisoning."),
    ("X05", "A subdural hematoma with contrecoup contusions after a fall shows traumatic brain injury from an occipital impact."),
    ("X06", "Severe coronary stenosis with cardiomegaly is a substrate for fatal arrhythmia during exertion."),
    ("X07", "Opioid concentrations in the fatal range with a fresh puncture mark indicate intoxication."),
    ("X08", "Gastric mucosal spots and pink knees in a cold environment indicate hypothermia."),
    ("X09", "A penetrating wound of a solid organ with a large hemoperitoneum causes death by hemorrhage."),
    ("X10", "Laryngeal edema and raised tryptase after an allergen exposure establish anaphylaxis."),
    ("X11", "An electrical entry mark with metallization on the hand indicates electrocution."),
    ("X12", "Raised vitreous glucose and ketones establish diabetic ketoacidosis."),
]

KB = {
    "toxicology": "Blood ethanol above 0.35 g/dL is commonly fatal. Fentanyl concentrations above 3 ng/mL have been reported in fatalities. Carboxyhemoglobin above 50 percent is usually fatal.",
    "pathology": "Pulmonary edema is a nonspecific finding in intoxications. Wischnewski spots are gastric erosions seen in hypothermia. Armanni-Ebstein lesions reflect glycosuria.",
    "trauma": "Contrecoup contusions occur opposite an impact on a moving head. A hemoperitoneum above 2 L is usually fatal.",
}

TOOLS = [
    ("pubmed_search", ["diatom"], json.dumps([
        {"id": "3100201", "title": "Diatom testing in freshwater drowning", "abstract": "Diatoms in bone marrow support drowning; negative results do not exclude it."},
        {"id": "3100202", "title": "Sensitivity of the diatom test", "abstract": "Sensitivity varies with water body and season."},
        {"id": "3100203", "title": "Contamination in diatom analysis", "abstract": "Laboratory contamination must be excluded."},
        {"id": "3100204", "title": "Diatoms and putrefaction", "abstract": "Putrefaction does not destroy frustules."},
    ])),
    ("pubmed_search", ["Wischnewski"], "<html>503 Service Unavailable</html>"),
    ("web_search", ["hanging"], json.dumps([
        {"title": "Ligature marks in hanging and strangulation", "url": "https://forensic.example.org/ligature", "snippet": "Hanging marks rise obliquely to the suspension point."},
        {"title": "Hyoid fractures in hanging", "url": "https://forensic.example.org/hyoid", "snippet": "Hyoid fractures are absent in many hangings."},
    ])),
    ("medical_llm", ["carboxyhemoglobin"], "Carboxyhemoglobin saturations above 50 percent are usually fatal; 64 percent is well within the lethal range."),
]


def outline(nodes):
    return "".join(f"{'  ' * d}[{i}] {t}\n" for d, i, t in nodes)


def rule(template, needles, reply):
    return {"template_id": template, "contains": needles, "response_text": reply}


def case_rules(c):
    bg = c["background"]
    out = []
    if "replan_tree" in c:
        out.append(rule("p_tree", [bg, c["audit_gap"]], outline(c["replan_tree"])))
        out.append(rule("p_select", [bg, "[c05-scalp]"], "SELECTED: " + ", ".join(c["replan_select"])))
    if "malformed_tree" in c:
        out.append(rule("p_tree", [bg, "could not be parsed"], outline(c["tree"])))
        out.append(rule("p_tree", [bg], c["malformed_tree"]))
    else:
        out.append(rule("p_tree", [bg], outline(c["tree"])))
    out.append(rule("p_select", [bg], "SELECTED: " + ", ".join(c["select"])))
    nodes = {i: t for _, i, t in c["tree"] + c.get("replan_tree", [])}
    for node_id, s in c["steps"].items():
        out.append(rule("p_adapt", [f"[{node_id}] {nodes[node_id]}"], s["instr"]))
    tasks = [(s["instr"], s) for s in c["steps"].values()] + [(g["q"], g) for g in c.get("gap", [])]
    for instr, s in tasks:
        out.append(rule("p_router", [instr], s["route"]))
        react = s.get("react", [])
        for k in range(len(react) - 1, 0, -1):
            out.append(rule("p_react", [instr, f"[Step {k}]"], react[k]))
        if react:
            out.append(rule("p_react", [instr], react[0]))
        out.append(rule("p_executor", [instr], s["answer"]))
        first = s["answer"].split(". ")[0]
        if "filter" in s:
            out.append(rule("p_filter", [first], s["filter"]))
        out.append(rule("p_tidy", [first], s["tidy"]))
    if "audit_gap" in c:
        out.append(rule("p_audit", [bg, c["steps"]["c05-scalp"]["instr"]], "NO_ISSUES"))
        out.append(rule("p_audit", [bg], "GAP: " + c["audit_gap"]))
    elif "audit_always" in c:
        out.append(rule("p_audit", [bg], c["audit_always"]))
    if "gap" in c:
        out.append(rule("p_gap", [bg], "\n".join("Q: " + g["q"] for g in c["gap"])))
    out.append(rule("p_summary", [bg], c["summary"]))
    out.append(rule("p_revise", [bg], c["summary"] + " Reviewer points were addressed."))
    out.append(rule("p_conclude", [c["summary"].split(". ")[0]], c["conclude"]))
    return out


def main():
    (HERE / "cases").mkdir(exist_ok=True)
    (HERE / "kb").mkdir(exist_ok=True)
    records = [{"settings": {"fallback": "echo", "echo_dim": 24}}]
    for c in CASES:
        records.extend(case_rules(c))
        dossier = {
            "case_id": c["id"],
            "demographics": c["demographics"],
            "background": c["background"],
            "clinical_findings": c["clinical"],
            "autopsy_findings": c["autopsy"],
            "toxicology": c["tox"],
            "reference_long_form": c["ref_long"],
            "reference_short_form": c["ref_short"],
            "category": c["category"],
        }
        (HERE / "cases" / f"{c['id']}.json").write_text(json.dumps(dossier, indent=2) + "\n")
    defaults = {
        "p_react": "THOUGHT: the case materials suffice\nFINAL: no external evidence needed",
        "p_router": "0",
        "p_executor": "The materials do not address this subtask directly.",
        "p_filter": "1: KEEP\n2: KEEP\n3: KEEP\n4: KEEP",
        "p_tidy": "No new validated findings.",
        "p_audit": "NO_ISSUES",
        "p_gap": "NONE",
        "p_summary": "The findings are summarized above.",
        "p_revise": "The draft was revised per the critiques.",
        "p_conclude": "Undetermined",
        "p_compress": "Context condensed.",
        "p_medical": "No medical opinion available.",
    }
    for t, r in defaults.items():
        records.append({"template_id": t, "variables_hash": "*", "response_text": r})
    for name, needles, result in TOOLS:
        records.append({"tool_name": name, "contains": needles, "result_text": result})
    with open(HERE / "scenario.ndjson", "w") as f:
        for r in records:
            f.write(json.dumps(r) + "\n")
    with open(HERE / "corpus.ndjson", "w") as f:
        for doc_id, text in CORPUS:
            f.write(json.dumps({"doc_id": doc_id, "analysis_text": text}) + "\n")
    for name, text in KB.items():
        (HERE / "kb" / f"{name}.txt").write_text(text + "\n")


if __name__ == "__main__":
    main()

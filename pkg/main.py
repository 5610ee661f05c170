from pathlib import Path
import ialora_hub.data_preprocessing as dp
from ialora_hub import ExperimentHub, run_ablation
from ialora_hub.result_management import read_traces
from ialora_hub.evaluation import analyze_router

# Specify the path to your case folder
path = Path("specify path to case folder")

# Create the configuration template (comment this line if already defined)
dp.create_experiment_templates(path)

# Train, evaluate and analyse the model
hub = ExperimentHub()
hub.read_data(path / "ConfigExperiment.json")
report = hub.run()

# Router statistics of several runs together
traces = read_traces(
    [hub.result_folder_path / "traces.jsonl", Path("path to other traces.jsonl")]
)
print(analyze_router(traces).to_dict())

# Ablations of the reasoning targets and the number of heads
run_ablation(path / "ConfigExperiment.json", variants=["erp", "heads"])

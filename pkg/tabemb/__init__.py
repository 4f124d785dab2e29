from .tables import Dataset, LabelSpace, Table, Task, load_dataset, write_dataset
from .embedding import column_embeddings, make_backend
from .colgraph import build_graph_pool, construct_graph, load_pool, save_pool
from .layers import GnnModel, TaskHead, head_forward, struct_embedding
from .pipeline import evaluate, load_model, predict, save_model, train
from .evaluation import freq_stratified_f1, micro_f1
from .synth import generate_synthetic

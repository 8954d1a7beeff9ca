from nodes.router import router_node
from nodes.single_site import single_site_node
from nodes.continuation import continuation_node
from nodes.worker import scan_worker_node
from nodes.reducer import scan_reducer_node
from nodes.couple_solve import couple_solve_node
from nodes.cascade_stage import cascade_stage_node
from nodes.reporter import report_node

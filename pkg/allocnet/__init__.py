from .planner_class import AllocNet

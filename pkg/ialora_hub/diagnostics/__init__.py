from .check_gradients import check_gradients, check_gradients_over_seeds

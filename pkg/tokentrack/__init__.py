'''
# Spatiotemporal token tracker: tensor core, model, tracking pipeline, training and tooling.
'''

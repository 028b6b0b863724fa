'''
Simplest possible nestmatch run.
'''

import nestmatch as nm

nest = nm.build_nest()
events = nm.detection_events(nest, nm.sample_errors(nest, seed=1))
matching, duals, forest = nm.match_all(nest, events)
print(nm.check_certificate(matching, duals, nest, events).summary())

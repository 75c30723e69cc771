"""Set up for Read the Docs build.

Writes a config.yaml so importing segpoint during autodoc does not warn about
a missing file.
"""

import os

home_dir = os.path.join(os.path.expanduser('~'), '.segpoint')
config_path = os.path.join(home_dir, 'config.yaml')

doc_configs = '''default_replicates: 1000
full_replicates: 10000
master_seed: 20080501
workers: 1
output_dir: segpoint_results'''

print('home_dir:', home_dir)
print('config_path:', config_path)

os.makedirs(home_dir, exist_ok=True)
with open(config_path, 'w') as file:
    file.write(doc_configs)

"""Graph convolutional autoencoders for reduced order modelling on unstructured meshes."""
